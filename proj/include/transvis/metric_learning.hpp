#pragma once

// Embedding model F, cosine distance, margin ranking loss with analytic
// gradients, and a plain mini-batch SGD trainer.
//
// Loss for a triplet (X, X+, X-):
//   L = max(0, D(F(X), F(X+)) - D(F(X), F(X-)) + m)
//   D(u, v) = 1 - u.v / (|u| |v|)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "transvis/error.hpp"
#include "transvis/features_io.hpp"
#include "transvis/matrix.hpp"
#include "transvis/parallel.hpp"
#include "transvis/rng.hpp"
#include "transvis/triplet_sampler.hpp"

namespace transvis {

inline constexpr double kNormFloor = 1e-12;

enum class Architecture : std::uint8_t { Linear, OneHidden };

inline std::string_view to_string(Architecture a) {
  return a == Architecture::Linear ? "linear" : "one_hidden";
}

inline Architecture architecture_from_string(std::string_view s) {
  if (s == "linear") return Architecture::Linear;
  if (s == "one_hidden") return Architecture::OneHidden;
  throw ConfigError("unknown architecture \"" + std::string(s) + "\"");
}

/// Parameters live in one flat vector so SGD and finite-difference checks
/// can treat the model as a point in R^P. Layout:
///   Linear:    W1 (d_out x d_in), b1 (d_out)
///   OneHidden: W1 (hidden x d_in), b1 (hidden), W2 (d_out x hidden), b2 (d_out)
template <class T>
class EmbeddingModel {
 public:
  EmbeddingModel() = default;

  EmbeddingModel(Architecture arch, std::size_t d_in, std::size_t hidden, std::size_t d_out)
      : arch_(arch), d_in_(d_in), hidden_(arch == Architecture::Linear ? 0 : hidden), d_out_(d_out) {
    if (d_in == 0 || d_out == 0) throw ConfigError("model: dimensions must be positive");
    if (arch == Architecture::OneHidden && hidden == 0)
      throw ConfigError("model: hidden width must be positive");
    params_.assign(parameter_count(), T{});
  }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)) per weight matrix; zero biases.
  static EmbeddingModel xavier(Architecture arch, std::size_t d_in, std::size_t hidden,
                               std::size_t d_out, std::uint64_t seed) {
    EmbeddingModel m(arch, d_in, hidden, d_out);
    Rng rng(seed);
    auto fill = [&](std::span<T> w, std::size_t fan_in, std::size_t fan_out) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    fill(m.w1(), d_in, m.first_out());
    if (arch == Architecture::OneHidden) fill(m.w2(), hidden, d_out);
    return m;
  }

  Architecture architecture() const noexcept { return arch_; }
  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t d_out() const noexcept { return d_out_; }

  std::size_t parameter_count() const noexcept {
    if (arch_ == Architecture::Linear) return d_out_ * d_in_ + d_out_;
    return hidden_ * d_in_ + hidden_ + d_out_ * hidden_ + d_out_;
  }

  std::span<T> params() noexcept { return params_; }
  std::span<const T> params() const noexcept { return params_; }

  std::span<T> w1() { return {params_.data(), first_out() * d_in_}; }
  std::span<T> b1() { return {params_.data() + first_out() * d_in_, first_out()}; }
  std::span<T> w2() { return {params_.data() + off_w2(), d_out_ * hidden_}; }
  std::span<T> b2() { return {params_.data() + off_w2() + d_out_ * hidden_, d_out_}; }
  std::span<const T> w1() const { return {params_.data(), first_out() * d_in_}; }
  std::span<const T> b1() const { return {params_.data() + first_out() * d_in_, first_out()}; }
  std::span<const T> w2() const { return {params_.data() + off_w2(), d_out_ * hidden_}; }
  std::span<const T> b2() const { return {params_.data() + off_w2() + d_out_ * hidden_, d_out_}; }

  /// Output width of the first layer.
  std::size_t first_out() const noexcept {
    return arch_ == Architecture::Linear ? d_out_ : hidden_;
  }

  bool finite() const {
    return std::all_of(params_.begin(), params_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const EmbeddingModel&, const EmbeddingModel&) = default;

 private:
  std::size_t off_w2() const noexcept { return hidden_ * d_in_ + hidden_; }

  Architecture arch_ = Architecture::Linear;
  std::size_t d_in_ = 0;
  std::size_t hidden_ = 0;
  std::size_t d_out_ = 0;
  std::vector<T> params_;
};

/// Intermediate values of one forward pass, kept for backprop.
template <class T>
struct Forward {
  std::vector<T> pre;     // first-layer pre-activation (OneHidden only)
  std::vector<T> hidden;  // max(0, pre)
  std::vector<T> out;
};

namespace detail {

template <class T, class U>
void affine(std::span<const T> w, std::span<const T> b, std::span<const U> x, std::vector<T>& y) {
  const std::size_t rows = b.size();
  const std::size_t cols = x.size();
  y.assign(rows, T{});
  for (std::size_t r = 0; r < rows; ++r) {
    T s = b[r];
    const T* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * static_cast<T>(x[c]);
    y[r] = s;
  }
}

}  // namespace detail

template <class T, class U>
Forward<T> forward(const EmbeddingModel<T>& model, std::span<const U> x) {
  if (x.size() != model.d_in())
    throw ValidationError("embed: input has dimension " + std::to_string(x.size()) +
                          ", model expects " + std::to_string(model.d_in()));
  Forward<T> f;
  if (model.architecture() == Architecture::Linear) {
    detail::affine(model.w1(), model.b1(), x, f.out);
    return f;
  }
  detail::affine(model.w1(), model.b1(), x, f.pre);
  f.hidden.resize(f.pre.size());
  for (std::size_t i = 0; i < f.pre.size(); ++i) f.hidden[i] = std::max(f.pre[i], T{});
  detail::affine(model.w2(), model.b2(), std::span<const T>(f.hidden), f.out);
  return f;
}

template <class T, class U>
std::vector<T> embed(const EmbeddingModel<T>& model, std::span<const U> x) {
  for (U v : x)
    if (!std::isfinite(static_cast<double>(v))) throw ValidationError("embed: non-finite input");
  return forward(model, x).out;
}

/// Embeds every row of `store`.
template <class T>
Matrix<T> embed_all(const EmbeddingModel<T>& model, const FeatureStore& store,
                    std::size_t workers = 1) {
  Matrix<T> out(store.size(), model.d_out());
  parallel_for(store.size(), workers, [&](std::size_t i) {
    const auto y = forward(model, store.row(i)).out;
    std::copy(y.begin(), y.end(), out.row(i).begin());
  });
  return out;
}

/// 1 - cos(u, v), in [0, 2]. Throws if either norm is below 1e-12.
template <class T, class U>
double cosine_distance(std::span<const T> u, std::span<const U> v) {
  if (u.size() != v.size()) throw ValidationError("cosine_distance: dimension mismatch");
  const double nu = std::sqrt(squared_norm(u));
  const double nv = std::sqrt(squared_norm(v));
  if (nu < kNormFloor || nv < kNormFloor)
    throw ValidationError("cosine_distance: vector norm below 1e-12");
  const double c = dot(u, v) / (nu * nv);
  return 1.0 - std::clamp(c, -1.0, 1.0);
}

/// dD(u, v)/du = -(v/|v| - cos * u/|u|) / |u|.
template <class T>
std::vector<T> cosine_distance_gradient(std::span<const T> u, std::span<const T> v) {
  const double nu = std::sqrt(squared_norm(u));
  const double nv = std::sqrt(squared_norm(v));
  if (nu < kNormFloor || nv < kNormFloor)
    throw ValidationError("cosine_distance: vector norm below 1e-12");
  const double c = dot(u, v) / (nu * nv);
  std::vector<T> g(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    g[i] = static_cast<T>(-(static_cast<double>(v[i]) / nv - c * static_cast<double>(u[i]) / nu) / nu);
  return g;
}

/// Feature rows of one triplet.
template <class U>
struct TripletFeatures {
  std::span<const U> anchor;
  std::span<const U> positive;
  std::span<const U> negative;
};

struct LossValue {
  double loss = 0.0;
  double d_pos = 0.0;
  double d_neg = 0.0;
  bool active = false;  // hinge argument strictly positive
};

template <class T, class U>
LossValue ranking_loss(const EmbeddingModel<T>& model, const TripletFeatures<U>& x, double margin) {
  const auto ya = forward(model, x.anchor).out;
  const auto yp = forward(model, x.positive).out;
  const auto yn = forward(model, x.negative).out;
  LossValue v;
  v.d_pos = cosine_distance(std::span<const T>(ya), std::span<const T>(yp));
  v.d_neg = cosine_distance(std::span<const T>(ya), std::span<const T>(yn));
  const double arg = v.d_pos - v.d_neg + margin;
  v.active = arg > 0.0;
  v.loss = v.active ? arg : 0.0;
  return v;
}

namespace detail {

// Accumulates d(loss)/d(params) for one tower given d(loss)/d(out).
template <class T, class U>
void backprop_tower(const EmbeddingModel<T>& model, std::span<const U> x, const Forward<T>& f,
                    std::span<const T> d_out, std::span<T> grad) {
  const std::size_t d_in = model.d_in();
  if (model.architecture() == Architecture::Linear) {
    T* gw = grad.data();
    T* gb = grad.data() + model.d_out() * d_in;
    for (std::size_t r = 0; r < model.d_out(); ++r) {
      const T g = d_out[r];
      if (g == T{}) continue;
      T* row = gw + r * d_in;
      for (std::size_t c = 0; c < d_in; ++c) row[c] += g * static_cast<T>(x[c]);
      gb[r] += g;
    }
    return;
  }
  const std::size_t h = model.hidden();
  const std::size_t d_out_n = model.d_out();
  T* gw1 = grad.data();
  T* gb1 = gw1 + h * d_in;
  T* gw2 = gb1 + h;
  T* gb2 = gw2 + d_out_n * h;
  const auto w2 = model.w2();
  std::vector<T> d_hidden(h, T{});
  for (std::size_t r = 0; r < d_out_n; ++r) {
    const T g = d_out[r];
    gb2[r] += g;
    T* row = gw2 + r * h;
    const T* wr = w2.data() + r * h;
    for (std::size_t c = 0; c < h; ++c) {
      row[c] += g * f.hidden[c];
      d_hidden[c] += g * wr[c];
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    // ReLU subgradient 0 at the kink.
    if (!(f.pre[r] > T{})) continue;
    const T g = d_hidden[r];
    gb1[r] += g;
    T* row = gw1 + r * d_in;
    for (std::size_t c = 0; c < d_in; ++c) row[c] += g * static_cast<T>(x[c]);
  }
}

}  // namespace detail

/// Adds the gradient of the triplet loss to `grad` (size parameter_count())
/// and returns the loss. Inactive hinge, including exactly at the kink,
/// contributes nothing.
template <class T, class U>
LossValue accumulate_gradient(const EmbeddingModel<T>& model, const TripletFeatures<U>& x,
                              double margin, std::span<T> grad) {
  const auto fa = forward(model, x.anchor);
  const auto fp = forward(model, x.positive);
  const auto fn = forward(model, x.negative);
  const std::span<const T> ya(fa.out), yp(fp.out), yn(fn.out);
  LossValue v;
  v.d_pos = cosine_distance(ya, yp);
  v.d_neg = cosine_distance(ya, yn);
  const double arg = v.d_pos - v.d_neg + margin;
  v.active = arg > 0.0;
  v.loss = v.active ? arg : 0.0;
  if (!v.active) return v;

  // dL/dya = dD(ya,yp)/dya - dD(ya,yn)/dya; dL/dyp = dD(yp,ya)/dyp; dL/dyn = -dD(yn,ya)/dyn.
  auto ga = cosine_distance_gradient(ya, yp);
  const auto ga_neg = cosine_distance_gradient(ya, yn);
  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= ga_neg[i];
  const auto gp = cosine_distance_gradient(yp, ya);
  auto gn = cosine_distance_gradient(yn, ya);
  for (T& g : gn) g = -g;

  detail::backprop_tower(model, x.anchor, fa, std::span<const T>(ga), grad);
  detail::backprop_tower(model, x.positive, fp, std::span<const T>(gp), grad);
  detail::backprop_tower(model, x.negative, fn, std::span<const T>(gn), grad);
  return v;
}

template <class T, class U>
std::vector<T> loss_gradient(const EmbeddingModel<T>& model, const TripletFeatures<U>& x,
                             double margin) {
  std::vector<T> grad(model.parameter_count(), T{});
  accumulate_gradient(model, x, margin, std::span<T>(grad));
  return grad;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double margin = 0.5;
  double learning_rate = 0.001;
  std::size_t batch_size = 100;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (!(margin > 0.0)) throw ConfigError("train: margin must be > 0");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  }
};

struct LossRecord {
  std::size_t iteration = 0;
  double mean_loss = 0.0;
  double active_fraction = 0.0;
};

template <class T>
struct TrainResult {
  EmbeddingModel<T> model;
  std::vector<LossRecord> trace;
};

/// One SGD step on the batch mean gradient. Per-triplet gradients are summed
/// in fixed chunks whose partial sums combine in chunk order, so the update
/// is identical for any worker count.
template <class T>
LossRecord sgd_step(EmbeddingModel<T>& model, const FeatureStore& features,
                    std::span<const Triplet> batch, double margin, double learning_rate,
                    std::size_t workers) {
  const std::size_t p = model.parameter_count();
  const std::size_t chunks = chunk_count(batch.size());
  std::vector<std::vector<T>> partial(chunks);
  std::vector<double> loss(chunks, 0.0);
  std::vector<std::size_t> active(chunks, 0);
  parallel_for(chunks, workers, [&](std::size_t c) {
    partial[c].assign(p, T{});
    const std::size_t end = std::min(batch.size(), (c + 1) * kReduceChunk);
    for (std::size_t i = c * kReduceChunk; i < end; ++i) {
      const auto& t = batch[i];
      const TripletFeatures<float> x{features.row(t.anchor), features.row(t.positive),
                                     features.row(t.negative)};
      const auto v = accumulate_gradient(model, x, margin, std::span<T>(partial[c]));
      loss[c] += v.loss;
      active[c] += v.active;
    }
  });
  for (std::size_t c = 1; c < chunks; ++c)
    for (std::size_t j = 0; j < p; ++j) partial[0][j] += partial[c][j];
  double total = 0.0;
  std::size_t n_active = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += loss[c];
    n_active += active[c];
  }
  const double n = static_cast<double>(batch.size());
  if (chunks > 0) {
    const T step = static_cast<T>(learning_rate / n);
    auto w = model.params();
    for (std::size_t j = 0; j < p; ++j) w[j] -= step * partial[0][j];
  }
  return {0, batch.empty() ? 0.0 : total / n, batch.empty() ? 0.0 : n_active / n};
}

/// Plain SGD over `config.iterations` batches pulled from `next_batch()`.
/// Throws TrainingError naming the batch if the loss or weights go
/// non-finite.
template <class T, class BatchSource>
TrainResult<T> train(EmbeddingModel<T> model, const FeatureStore& features,
                     BatchSource&& next_batch, const TrainConfig& config) {
  config.validate();
  if (features.dim() != model.d_in())
    throw ValidationError("train: feature dimension does not match model input");
  if (!model.finite()) throw ValidationError("train: initial weights are not finite");
  TrainResult<T> res;
  res.trace.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const std::vector<Triplet> batch = next_batch();
    LossRecord rec;
    try {
      rec = sgd_step(model, features, std::span<const Triplet>(batch), config.margin,
                     config.learning_rate, config.workers);
    } catch (const ValidationError& e) {
      throw TrainingError("batch " + std::to_string(it) + ": " + e.what(), it);
    }
    rec.iteration = it;
    if (!std::isfinite(rec.mean_loss) || !model.finite())
      throw TrainingError("non-finite loss at batch " + std::to_string(it), it);
    res.trace.push_back(rec);
  }
  res.model = std::move(model);
  return res;
}

template <class T>
TrainResult<T> train(EmbeddingModel<T> model, const FeatureStore& features,
                     TripletSampler& sampler, const TrainConfig& config) {
  return train(std::move(model), features, [&sampler] { return sampler.next_batch(); }, config);
}

// ---------------------------------------------------------------------------
// Checkpoints: one TIVG file per tensor plus a JSON manifest. Biases are
// stored as 1 x n matrices.

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::size_t iteration = 0;
};

inline std::vector<std::string> checkpoint_tensor_names(Architecture arch) {
  if (arch == Architecture::Linear) return {"w1", "b1"};
  return {"w1", "b1", "w2", "b2"};
}

inline void save_checkpoint(const EmbeddingModel<float>& model, const CheckpointInfo& info,
                            const std::filesystem::path& manifest_path) {
  const auto dir = manifest_path.parent_path();
  const auto stem = manifest_path.stem().string();
  nlohmann::ordered_json j;
  j["architecture"] = to_string(model.architecture());
  j["d_in"] = model.d_in();
  j["hidden"] = model.hidden();
  j["d_out"] = model.d_out();
  j["seed"] = info.seed;
  j["iteration"] = info.iteration;
  auto tensors = nlohmann::ordered_json::object();
  auto put = [&](const std::string& name, std::span<const float> data, std::size_t rows,
                 std::size_t cols) {
    const std::string file = stem + "_" + name + ".tivg";
    save_matrix(Matrix<float>(rows, cols, std::vector<float>(data.begin(), data.end())), dir / file);
    tensors[name] = file;
  };
  put("w1", model.w1(), model.first_out(), model.d_in());
  put("b1", model.b1(), 1, model.first_out());
  if (model.architecture() == Architecture::OneHidden) {
    put("w2", model.w2(), model.d_out(), model.hidden());
    put("b2", model.b2(), 1, model.d_out());
  }
  j["tensors"] = tensors;
  detail::write_file(manifest_path, j.dump(2) + "\n");
}

inline EmbeddingModel<float> load_checkpoint(const std::filesystem::path& manifest_path,
                                             CheckpointInfo* info = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what(), 0);
  }
  try {
    const auto arch = architecture_from_string(j.at("architecture").get<std::string>());
    EmbeddingModel<float> model(arch, j.at("d_in").get<std::size_t>(),
                                j.at("hidden").get<std::size_t>(), j.at("d_out").get<std::size_t>());
    const auto dir = manifest_path.parent_path();
    auto take = [&](const char* name, std::span<float> dst, std::size_t rows, std::size_t cols) {
      const auto m = load_matrix(dir / j.at("tensors").at(name).get<std::string>());
      if (m.rows() != rows || m.cols() != cols)
        throw ValidationError(std::string("checkpoint tensor ") + name + " has wrong shape");
      std::copy(m.data().begin(), m.data().end(), dst.begin());
    };
    take("w1", model.w1(), model.first_out(), model.d_in());
    take("b1", model.b1(), 1, model.first_out());
    if (arch == Architecture::OneHidden) {
      take("w2", model.w2(), model.d_out(), model.hidden());
      take("b2", model.b2(), 1, model.d_out());
    }
    if (info) {
      info->seed = j.at("seed").get<std::uint64_t>();
      info->iteration = j.at("iteration").get<std::size_t>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what(), 0);
  }
}

// Loss trace CSV: iteration,mean_loss,active_fraction

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void save_loss_trace(const std::vector<LossRecord>& trace, const std::filesystem::path& path) {
  std::string out = "iteration,mean_loss,active_fraction\n";
  for (const auto& r : trace)
    out += std::to_string(r.iteration) + "," + format_double(r.mean_loss) + "," +
           format_double(r.active_fraction) + "\n";
  detail::write_file(path, out);
}

}  // namespace transvis
