// SPDX-License-Identifier: Apache-2.0
#include "symmerge/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "symmerge/align.hpp"
#include "symmerge/arithmetic.hpp"
#include "symmerge/checkpoint.hpp"
#include "symmerge/error.hpp"
#include "symmerge/symmetry.hpp"

namespace symmerge::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kDefaultEvalSequences = 32;
constexpr std::size_t kDefaultEvalLength = 16;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      EVP_MD_CTX_free(ctx_);
      throw Error("sha256: digest initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes) {
    if (EVP_DigestUpdate(ctx_, bytes.data(), bytes.size()) != 1) throw Error("sha256: update failed");
  }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error("sha256: finalisation failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
      os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return os.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

struct Manifest {
  std::string command;
  json inputs = json::object();
  json options = json::object();
  std::optional<std::uint64_t> seed;
  std::vector<fs::path> outputs;
  // Files covered by "digest"; all outputs when empty.
  std::vector<fs::path> digest_files;
};

using Clock = std::chrono::steady_clock;

fs::path write_manifest(const fs::path& dir, const Manifest& m, Clock::time_point start) {
  json j;
  j["command"] = m.command;
  j["inputs"] = m.inputs;
  j["options"] = m.options;
  j["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  j["tool_version"] = kToolVersion;
  j["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  json outs = json::array();
  for (const fs::path& p : m.outputs) {
    outs.push_back({{"path", p.filename().string()}, {"sha256", file_digest(p)}});
  }
  j["outputs"] = outs;
  const auto& covered = m.digest_files.empty() ? m.outputs : m.digest_files;
  json covered_names = json::array();
  for (const fs::path& p : covered) covered_names.push_back(p.filename().string());
  j["digest_files"] = covered_names;
  j["digest"] = files_digest(covered);
  const fs::path path = dir / "manifest.json";
  write_file_atomic(path, j.dump(2) + "\n");
  return path;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() +
                  (ec ? ": " + ec.message() : std::string()));
  }
}

fs::path write_json(const fs::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
  return path;
}

fs::path write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text);
  return path;
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(path.string() + ": invalid JSON: " + e.what());
  }
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::scientific << v;
  return os.str();
}

// --- gen-toy ----------------------------------------------------------------

struct GenToyArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  bool f64 = false;
};

int cmd_gen_toy(const GenToyArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const ModelConfig config = config_from_json(read_json_file(a.config));
  const ModelWeights w = gen_toy_model(config, a.seed);
  const fs::path dir = a.out;
  const DType dtype = a.f64 ? DType::kF64 : DType::kF32;
  save_checkpoint(w, dir, dtype);

  Manifest m;
  m.command = "gen-toy";
  m.inputs = {{"config", a.config}};
  m.options = {{"dtype", dtype_name(dtype)}};
  m.seed = a.seed;
  m.outputs = {dir / kTensorFileName, dir / kConfigFileName};
  m.digest_files = {dir / kTensorFileName};
  write_manifest(dir, m, start);
  out << "wrote " << (dir / kTensorFileName).string() << " (" << dtype_name(dtype) << ")\n";
  return kSuccess;
}

// --- align ------------------------------------------------------------------

struct AlignArgs {
  std::string model1;
  std::string model2;
  std::string mode = "weights";
  std::string symmetries = "perm,rot,scale";
  std::string prompts;
  std::string out;
  std::uint64_t seed = 0;
};

AlignmentOptions alignment_options(const std::string& mode, const std::string& symmetries,
                                   const std::string& prompts) {
  AlignmentOptions opts;
  opts.mode = parse_mode(mode);
  opts.symmetries = SymmetrySet::parse(symmetries);
  if (opts.mode == AlignmentMode::kActivations) {
    if (prompts.empty()) throw InvalidInput("activation mode requires --prompts");
    opts.batches = read_token_file(prompts);
    if (opts.batches.empty()) throw InvalidInput(prompts + ": no token sequences");
  }
  return opts;
}

int cmd_align(const AlignArgs& a, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  const AlignmentOptions opts = alignment_options(a.mode, a.symmetries, a.prompts);
  const ModelWeights w1 = load_checkpoint(a.model1);
  const ModelWeights w2 = load_checkpoint(a.model2);
  require_same_config(w1.config, w2.config, "align");
  const AlignmentResult result = align_models(w1, w2, opts);

  const fs::path dir = a.out;
  ensure_directory(dir);
  Manifest m;
  m.command = "align";
  m.inputs = {{"model1", a.model1}, {"model2", a.model2}};
  if (!a.prompts.empty()) m.inputs["prompts"] = a.prompts;
  m.options = {{"mode", mode_name(opts.mode)}, {"symmetries", opts.symmetries.to_string()}};
  m.seed = a.seed;
  m.outputs.push_back(write_json(dir / "transform.json", transform_to_json(result.transform)));
  m.outputs.push_back(write_json(dir / "report.json", report_to_json(result.report)));
  const std::string text = report_to_text(result.report);
  m.outputs.push_back(write_text(dir / "report.txt", text));
  write_manifest(dir, m, start);
  out << text;
  for (const std::string& w : result.report.warnings) err << "warning: " << w << "\n";
  return kSuccess;
}

// --- transfer ---------------------------------------------------------------

struct TransferArgs {
  std::string target;
  std::string reference;
  std::string skill;
  std::string align_transform;
  bool no_align = false;
  std::string mode = "weights";
  std::string symmetries = "perm,rot,scale";
  std::string prompts;
  double lambda = 1.0;
  std::string out;
  bool f64 = false;
  std::string eval_against;
  std::string eval_tokens;
  std::uint64_t seed = 0;
};

int cmd_transfer(const TransferArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const ModelWeights target = load_checkpoint(a.target);
  const ModelWeights reference = load_checkpoint(a.reference);
  const ModelWeights skill = load_checkpoint(a.skill);
  require_same_config(target.config, reference.config, "transfer (target vs reference)");
  require_same_config(skill.config, reference.config, "transfer (skill vs reference)");

  std::string alignment_source;
  TransferResult result;
  std::optional<AlignmentReport> report;
  if (a.no_align) {
    alignment_source = "none";
    result = transfer_with_transform(target, reference, skill, SymmetryTransform{}, a.lambda);
  } else if (!a.align_transform.empty()) {
    alignment_source = "file";
    const SymmetryTransform t = transform_from_json(read_json_file(a.align_transform));
    validate_transform(t, target.config);
    result = transfer_with_transform(target, reference, skill, t, a.lambda);
  } else {
    alignment_source = "computed";
    TransferOptions opts;
    opts.alignment = alignment_options(a.mode, a.symmetries, a.prompts);
    opts.lambda = a.lambda;
    result = aligned_transfer(target, reference, skill, opts);
    report = result.report;
  }

  const fs::path dir = a.out;
  const DType dtype = a.f64 ? DType::kF64 : DType::kF32;
  save_checkpoint(result.merged, dir, dtype);

  Manifest m;
  m.command = "transfer";
  m.inputs = {{"target", a.target}, {"reference", a.reference}, {"skill", a.skill}};
  if (!a.align_transform.empty()) m.inputs["align_transform"] = a.align_transform;
  if (!a.prompts.empty()) m.inputs["prompts"] = a.prompts;
  m.options = {{"alignment", alignment_source}, {"lambda", a.lambda}, {"dtype", dtype_name(dtype)}};
  if (alignment_source == "computed") {
    m.options["mode"] = a.mode;
    m.options["symmetries"] = a.symmetries;
  }
  m.seed = a.seed;
  m.outputs = {dir / kTensorFileName, dir / kConfigFileName};
  m.digest_files = {dir / kTensorFileName};

  json summary = {{"alignment", alignment_source},
                  {"lambda", a.lambda},
                  {"transform_identity", result.transform.is_identity()}};
  if (report) {
    m.outputs.push_back(write_json(dir / "transform.json", transform_to_json(result.transform)));
    summary["alignment_report"] = report_to_json(*report);
  }
  out << "alignment: " << alignment_source << ", lambda " << a.lambda << "\n";
  if (!a.eval_against.empty()) {
    const ModelWeights truth = load_checkpoint(a.eval_against);
    require_same_config(truth.config, result.merged.config, "transfer (evaluation model)");
    const std::vector<TokenSequence> seqs =
        a.eval_tokens.empty() ? random_token_sequences(kDefaultEvalSequences, kDefaultEvalLength,
                                                       truth.config.vocab_size, a.seed)
                              : read_token_file(a.eval_tokens);
    const double mse = mean_squared_logit_error(result.merged, truth, seqs);
    summary["evaluation"] = {{"against", a.eval_against},
                             {"sequences", seqs.size()},
                             {"logit_mse", mse}};
    m.inputs["eval_against"] = a.eval_against;
    if (!a.eval_tokens.empty()) m.inputs["eval_tokens"] = a.eval_tokens;
    out << "logit MSE vs " << a.eval_against << ": " << format_number(mse) << "\n";
  }
  m.outputs.push_back(write_json(dir / "transfer_report.json", summary));
  write_manifest(dir, m, start);
  out << "wrote " << (dir / kTensorFileName).string() << " (" << dtype_name(dtype) << ")\n";
  return kSuccess;
}

// --- verify -----------------------------------------------------------------

struct VerifyArgs {
  std::string checkpoint;
  std::string transform;
  bool random_transform = false;
  std::string tokens;
  double tolerance = 1e-8;
  bool shapes = false;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  json result;
  result["checkpoint"] = a.checkpoint;
  int code = kSuccess;

  const ModelWeights w = load_checkpoint(a.checkpoint);
  w.validate();
  result["shapes"] = "ok";
  out << "shapes: ok (" << w.config.n_layers << " layers, hidden " << w.config.hidden_dim << ")\n";

  const bool run_forward = !a.shapes || !a.transform.empty() || a.random_transform;
  if (run_forward) {
    SymmetryTransform t;
    std::string source = "identity";
    if (!a.transform.empty()) source = a.transform;
    if (a.random_transform) source = "random";
    result["transform"] = source;
    result["tolerance"] = a.tolerance;
    try {
      if (!a.transform.empty()) t = transform_from_json(read_json_file(a.transform));
      if (a.random_transform) t = random_transform(w.config, a.seed);
      validate_transform(t, w.config);
    } catch (const InvalidTransform& e) {
      result["status"] = "invalid_transform";
      result["violation"] = e.what();
      err << "invalid transform: " << e.what() << "\n";
      out << "FAIL\n";
      code = kVerificationFailed;
    }
    if (code == kSuccess) {
      const std::vector<TokenSequence> seqs =
          a.tokens.empty() ? random_token_sequences(kDefaultEvalSequences, kDefaultEvalLength,
                                                    w.config.vocab_size, a.seed)
                           : read_token_file(a.tokens);
      if (seqs.empty()) throw InvalidInput("verify: no token sequences");
      const ModelWeights moved = apply_transform(w, t);
      const double delta = max_logit_difference(w, moved, seqs);
      const bool pass = delta <= a.tolerance;
      result["sequences"] = seqs.size();
      result["max_logit_delta"] = delta;
      result["status"] = pass ? "pass" : "fail";
      out << "max |logit delta| = " << format_number(delta) << " over " << seqs.size()
          << " sequences (tolerance " << format_number(a.tolerance) << "): "
          << (pass ? "PASS" : "FAIL") << "\n";
      if (!pass) code = kVerificationFailed;
    }
  } else {
    result["status"] = "pass";
  }

  if (!a.out.empty()) {
    const fs::path dir = a.out;
    ensure_directory(dir);
    Manifest m;
    m.command = "verify";
    m.inputs = {{"checkpoint", a.checkpoint}};
    if (!a.transform.empty()) m.inputs["transform"] = a.transform;
    if (!a.tokens.empty()) m.inputs["tokens"] = a.tokens;
    m.options = {{"tolerance", a.tolerance},
                 {"shapes_only", a.shapes},
                 {"random_transform", a.random_transform}};
    m.seed = a.seed;
    m.outputs.push_back(write_json(dir / "verify.json", result));
    write_manifest(dir, m, start);
  }
  return code;
}

// --- diff -------------------------------------------------------------------

struct DiffArgs {
  std::string model1;
  std::string model2;
  std::string out;
};

int cmd_diff(const DiffArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  const ModelWeights w1 = load_checkpoint(a.model1);
  const ModelWeights w2 = load_checkpoint(a.model2);
  require_same_config(w1.config, w2.config, "diff");

  std::vector<std::pair<std::string, const Matrix*>> t2;
  w2.for_each_tensor(
      [&](const std::string& name, const Matrix& m, TensorRank) { t2.emplace_back(name, &m); });
  json rows = json::array();
  double total_sq = 0.0;
  double total_max = 0.0;
  std::size_t width = 6;
  std::size_t i = 0;
  w1.for_each_tensor([&](const std::string& name, const Matrix& m, TensorRank) {
    const Matrix d = m - *t2[i++].second;
    const double fro = frobenius_norm(d);
    const double mx = max_abs(d);
    total_sq += fro * fro;
    total_max = std::max(total_max, mx);
    width = std::max(width, name.size());
    rows.push_back({{"tensor", name}, {"frobenius", fro}, {"max_abs", mx}});
  });
  const double total_fro = std::sqrt(total_sq);

  std::ostringstream table;
  table << std::left << std::setw(static_cast<int>(width)) << "tensor" << "  " << std::setw(14)
        << "frobenius" << "  " << "max_abs\n";
  for (const json& r : rows) {
    table << std::left << std::setw(static_cast<int>(width)) << r["tensor"].get<std::string>()
          << "  " << std::setw(14) << format_number(r["frobenius"].get<double>()) << "  "
          << format_number(r["max_abs"].get<double>()) << "\n";
  }
  table << std::left << std::setw(static_cast<int>(width)) << "total" << "  " << std::setw(14)
        << format_number(total_fro) << "  " << format_number(total_max) << "\n";
  out << table.str();

  if (!a.out.empty()) {
    const fs::path dir = a.out;
    ensure_directory(dir);
    const json j = {{"model1", a.model1},
                    {"model2", a.model2},
                    {"tensors", rows},
                    {"total", {{"frobenius", total_fro}, {"max_abs", total_max}}}};
    Manifest m;
    m.command = "diff";
    m.inputs = {{"model1", a.model1}, {"model2", a.model2}};
    m.outputs.push_back(write_json(dir / "diff.json", j));
    m.outputs.push_back(write_text(dir / "diff.txt", table.str()));
    write_manifest(dir, m, start);
  }
  return kSuccess;
}

}  // namespace

std::vector<TokenSequence> read_token_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open token file " + path.string());
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream is(line);
    TokenSequence seq;
    std::string word;
    while (is >> word) {
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(word, &used);
      } catch (const std::logic_error&) {
        used = 0;
      }
      if (used != word.size() || word.front() == '-' || v > UINT32_MAX) {
        throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": bad token id '" +
                           word + "'");
      }
      seq.push_back(static_cast<std::uint32_t>(v));
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

std::string file_digest(const fs::path& path) { return files_digest({path}); }

std::string files_digest(const std::vector<fs::path>& files) {
  Sha256 h;
  for (const fs::path& p : files) h.update(read_file(p));
  return h.hex();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Align transformer checkpoints by their parameter symmetries and transfer task "
               "vectors between them.",
               "symmerge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenToyArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Generate a seeded toy checkpoint");
  gen_cmd->add_option("--config", gen.config, "Model config JSON")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--out", gen.out, "Output checkpoint directory")->required();
  gen_cmd->add_flag("--f64", gen.f64, "Store tensors as F64 instead of F32");

  AlignArgs al;
  auto* align_cmd = app.add_subcommand("align", "Align model2 to model1");
  align_cmd->add_option("--model1", al.model1, "Anchor checkpoint")->required();
  align_cmd->add_option("--model2", al.model2, "Checkpoint to move")->required();
  align_cmd->add_option("--mode", al.mode, "weights | activations");
  align_cmd->add_option("--symmetries", al.symmetries, "Subset of perm,rot,scale");
  align_cmd->add_option("--prompts", al.prompts, "Token-id file for activation mode");
  align_cmd->add_option("--out", al.out, "Output directory")->required();
  align_cmd->add_option("--seed", al.seed, "Recorded in the manifest");

  TransferArgs tr;
  auto* transfer_cmd =
      app.add_subcommand("transfer", "Add the reference pair's task vector to the aligned target");
  transfer_cmd->add_option("--target", tr.target, "Target checkpoint")->required();
  transfer_cmd->add_option("--reference", tr.reference, "Reference base checkpoint")->required();
  transfer_cmd->add_option("--skill", tr.skill, "Reference fine-tuned checkpoint")->required();
  auto* at = transfer_cmd->add_option("--align-transform", tr.align_transform,
                                      "Precomputed transform for the target");
  auto* na = transfer_cmd->add_flag("--no-align", tr.no_align, "Plain task arithmetic");
  at->excludes(na);
  transfer_cmd->add_option("--mode", tr.mode, "Alignment mode when computing the transform");
  transfer_cmd->add_option("--symmetries", tr.symmetries, "Symmetry families when computing");
  transfer_cmd->add_option("--prompts", tr.prompts, "Token-id file for activation mode");
  transfer_cmd->add_option("--lambda", tr.lambda, "Task vector coefficient");
  transfer_cmd->add_option("--out", tr.out, "Output checkpoint directory")->required();
  transfer_cmd->add_flag("--f64", tr.f64, "Store tensors as F64 instead of F32");
  transfer_cmd->add_option("--eval-against", tr.eval_against,
                           "Checkpoint to compare logits against");
  transfer_cmd->add_option("--eval-tokens", tr.eval_tokens, "Token-id file for the evaluation");
  transfer_cmd->add_option("--seed", tr.seed, "Seed for generated evaluation tokens");

  VerifyArgs ve;
  auto* verify_cmd =
      app.add_subcommand("verify", "Check that a transform preserves the checkpoint's logits");
  verify_cmd->add_option("--checkpoint", ve.checkpoint, "Checkpoint")->required();
  auto* vt = verify_cmd->add_option("--transform", ve.transform, "Transform JSON");
  auto* vr = verify_cmd->add_flag("--random-transform", ve.random_transform,
                                  "Use a random transform drawn from --seed");
  vt->excludes(vr);
  verify_cmd->add_option("--tokens", ve.tokens, "Token-id file");
  verify_cmd->add_option("--tolerance", ve.tolerance, "Max allowed |logit delta|");
  verify_cmd->add_flag("--shapes", ve.shapes, "Only check tensor shapes unless a transform is given");
  verify_cmd->add_option("--seed", ve.seed, "Seed for random tokens and transforms");
  verify_cmd->add_option("--out", ve.out, "Directory for verify.json and the manifest");

  DiffArgs df;
  auto* diff_cmd = app.add_subcommand("diff", "Per-tensor distances between two checkpoints");
  diff_cmd->add_option("--model1", df.model1, "First checkpoint")->required();
  diff_cmd->add_option("--model2", df.model2, "Second checkpoint")->required();
  diff_cmd->add_option("--out", df.out, "Directory for diff.json and the manifest");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*gen_cmd) return cmd_gen_toy(gen, out);
    if (*align_cmd) return cmd_align(al, out, err);
    if (*transfer_cmd) return cmd_transfer(tr, out);
    if (*verify_cmd) return cmd_verify(ve, out, err);
    if (*diff_cmd) return cmd_diff(df, out);
  } catch (const ConfigMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kIncompatible;
  } catch (const NumericalFailure& e) {
    err << "error: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace symmerge::cli
