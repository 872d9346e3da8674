// SPDX-License-Identifier: Apache-2.0
#include "symmerge/arithmetic.hpp"

#include <cmath>
#include <sstream>

#include "symmerge/error.hpp"

namespace symmerge {

namespace {

// Knuth's error-free sum: s + e == a + b exactly.
struct TwoSum {
  double s;
  double e;
};

TwoSum two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  const double e = (a - (s - bb)) + (b - bb);
  return {s, e};
}

// Walks the tensors of several same-config models in lockstep.
template <typename Fn>
void zip_tensors(const ModelWeights& a, const ModelWeights& b, Fn&& fn) {
  std::vector<const Matrix*> bs;
  b.for_each_tensor([&](const std::string&, const Matrix& m, TensorRank) { bs.push_back(&m); });
  std::size_t i = 0;
  a.for_each_tensor([&](const std::string& name, const Matrix& m, TensorRank) {
    fn(name, m, *bs[i++]);
  });
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double TaskVector::norm() const {
  double sq = 0.0;
  zip_tensors(delta, residual, [&](const std::string&, const Matrix& d, const Matrix& r) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v = d.data()[i] + r.data()[i];
      sq += v * v;
    }
  });
  return std::sqrt(sq);
}

TaskVector extract_task_vector(const ModelWeights& fine_tuned, const ModelWeights& base,
                               std::string source_id, std::string base_id) {
  require_same_config(fine_tuned.config, base.config, "extract_task_vector");
  fine_tuned.validate();
  base.validate();
  TaskVector tau;
  tau.delta = zero_weights(base.config);
  tau.residual = zero_weights(base.config);
  tau.source_id = std::move(source_id);
  tau.base_id = std::move(base_id);

  std::vector<Matrix*> deltas, residuals;
  tau.delta.for_each_tensor([&](const std::string&, Matrix& m, TensorRank) { deltas.push_back(&m); });
  tau.residual.for_each_tensor(
      [&](const std::string&, Matrix& m, TensorRank) { residuals.push_back(&m); });
  std::size_t t = 0;
  zip_tensors(fine_tuned, base, [&](const std::string&, const Matrix& f, const Matrix& b) {
    auto d = deltas[t]->data();
    auto r = residuals[t]->data();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const TwoSum ts = two_sum(f.data()[i], -b.data()[i]);
      d[i] = ts.s;
      r[i] = ts.e;
    }
    ++t;
  });
  return tau;
}

ModelWeights apply_task_vector(const ModelWeights& target, const TaskVector& tau, double lambda) {
  if (!std::isfinite(lambda)) throw InvalidInput("apply_task_vector: lambda must be finite");
  require_same_config(target.config, tau.config(), "apply_task_vector");
  target.validate();
  ModelWeights out = target;
  std::vector<Matrix*> outs;
  out.for_each_tensor([&](const std::string&, Matrix& m, TensorRank) { outs.push_back(&m); });
  std::size_t t = 0;
  zip_tensors(tau.delta, tau.residual, [&](const std::string& name, const Matrix& d, const Matrix& r) {
    Matrix& o = *outs[t++];
    if (o.rows() != d.rows() || o.cols() != d.cols()) {
      throw InvalidInput("apply_task_vector: tensor " + name + " has shape " + o.shape_string() +
                         " in the target but " + d.shape_string() + " in the task vector");
    }
    auto od = o.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
      const TwoSum ts = two_sum(od[i], lambda * d.data()[i]);
      od[i] = ts.s + (ts.e + lambda * r.data()[i]);
    }
  });
  return out;
}

void save_task_vector(const TaskVector& tau, const std::filesystem::path& file, DType dtype) {
  safetensors::Container c;
  if (dtype == DType::kF64) {
    c = to_container(tau.delta);
    const safetensors::Container res = to_container(tau.residual);
    for (const auto& [name, t] : res.tensors) c.tensors.emplace_back(name + ".residual", t);
  } else {
    ModelWeights folded = tau.delta;
    std::vector<const Matrix*> rs;
    tau.residual.for_each_tensor(
        [&](const std::string&, const Matrix& m, TensorRank) { rs.push_back(&m); });
    std::size_t i = 0;
    folded.for_each_tensor([&](const std::string&, Matrix& m, TensorRank) { m += *rs[i++]; });
    c = to_container(folded);
  }
  c.metadata["task_vector"] = "true";
  c.metadata["source"] = tau.source_id;
  c.metadata["base"] = tau.base_id;
  c.metadata["lambda"] = format_double(tau.lambda);
  c.metadata["config"] = config_to_json(tau.config()).dump();
  if (!file.parent_path().empty()) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
  }
  safetensors::write(file, c, dtype);
}

TaskVector load_task_vector(const std::filesystem::path& file) {
  const safetensors::Container c = safetensors::read(file);
  auto meta = [&](const char* key) -> std::string {
    auto it = c.metadata.find(key);
    if (it == c.metadata.end()) throw LoadError(file.string() + ": missing metadata '" + key + "'");
    return it->second;
  };
  if (meta("task_vector") != "true") {
    throw LoadError(file.string() + ": not a task vector (task_vector metadata flag unset)");
  }
  ModelConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(meta("config")));
  } catch (const std::exception& e) {
    throw LoadError(file.string() + ": bad embedded config: " + e.what());
  }
  TaskVector tau;
  tau.delta = from_container(c, config, file.string());
  tau.residual = zero_weights(config);
  safetensors::Container res;
  bool has_residual = false;
  for (const auto& [name, t] : c.tensors) {
    const std::string suffix = ".residual";
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      res.tensors.emplace_back(name.substr(0, name.size() - suffix.size()), t);
      has_residual = true;
    }
  }
  if (has_residual) tau.residual = from_container(res, config, file.string() + " (residual)");
  tau.source_id = meta("source");
  tau.base_id = meta("base");
  try {
    tau.lambda = std::stod(meta("lambda"));
  } catch (const std::logic_error&) {
    throw LoadError(file.string() + ": lambda metadata is not a number");
  }
  return tau;
}

TransferResult transfer_with_transform(const ModelWeights& target, const ModelWeights& reference,
                                       const ModelWeights& skill_source,
                                       const SymmetryTransform& transform, double lambda) {
  require_same_config(target.config, reference.config, "transfer (target vs reference)");
  require_same_config(skill_source.config, reference.config, "transfer (skill vs reference)");
  TransferResult result;
  result.transform = transform;
  const ModelWeights aligned =
      transform.is_identity() ? target : apply_transform(target, transform);
  const TaskVector tau = extract_task_vector(skill_source, reference);
  result.merged = apply_task_vector(aligned, tau, lambda);
  return result;
}

TransferResult aligned_transfer(const ModelWeights& target, const ModelWeights& reference,
                                const ModelWeights& skill_source, const TransferOptions& opts) {
  require_same_config(target.config, reference.config, "aligned_transfer (target vs reference)");
  require_same_config(skill_source.config, reference.config,
                      "aligned_transfer (skill vs reference)");
  SymmetryTransform t;
  AlignmentReport report;
  if (opts.align) {
    AlignmentResult r = align_models(reference, target, opts.alignment);
    t = std::move(r.transform);
    report = std::move(r.report);
  }
  TransferResult result = transfer_with_transform(target, reference, skill_source, t, opts.lambda);
  result.report = std::move(report);
  return result;
}

}  // namespace symmerge
