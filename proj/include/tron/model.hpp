// Copyright (c) 2026 tron-cpp contributors
// SPDX-License-Identifier: Apache-2.0

// SASRec-style causal self-attention encoder with tied item embeddings.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tron/data.hpp"
#include "tron/errors.hpp"
#include "tron/optim.hpp"
#include "tron/rng.hpp"
#include "tron/sampler.hpp"
#include "tron/tensor.hpp"

namespace tron {

struct ModelConfig {
  std::size_t vocab = 0;  // |I|; row `vocab` of the item table is padding
  std::size_t hidden_dim = 200;
  std::size_t num_layers = 2;
  std::size_t num_heads = 1;
  std::size_t max_len = 50;
  double dropout = 0.2;
  bool post_norm = true;
  double ln_eps = 1e-8;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (vocab == 0) throw ConfigError("model vocabulary is empty");
    if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0) {
      throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    }
    if (max_len < 2) throw ConfigError("max_len must be at least 2");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Flat positions of a batch that carry a target, in row-major order.
struct ValidRows {
  std::vector<std::int64_t> flat;     // s * width + t
  std::vector<std::int32_t> targets;
  std::vector<std::size_t> session;   // s
  std::vector<std::size_t> position;  // t

  std::size_t size() const { return flat.size(); }

  static ValidRows of(const SessionBatch& batch) {
    ValidRows v;
    for (std::size_t s = 0; s < batch.batch_size; ++s) {
      for (std::size_t t = 0; t < batch.width; ++t) {
        const std::size_t i = s * batch.width + t;
        if (!batch.mask[i]) continue;
        v.flat.push_back(static_cast<std::int64_t>(i));
        v.targets.push_back(batch.targets[i]);
        v.session.push_back(s);
        v.position.push_back(t);
      }
    }
    return v;
  }

  /// Group of `negs` each row is scored against.
  std::vector<std::size_t> groups(const NegativeSet& negs) const {
    std::vector<std::size_t> g(size());
    for (std::size_t r = 0; r < size(); ++r) g[r] = negs.group_of(session[r], position[r]);
    return g;
  }
};

class Model {
 public:
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gain, ln1_bias;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gain, ln2_bias;
  };

  explicit Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.hidden_dim;
    CounterRng rng(cfg_.init_seed, 0, 0, StreamTag::kInit);
    auto xavier = [&](std::size_t rows, std::size_t cols) {
      const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::vector<double> v(rows * cols);
      for (double& x : v) x = (2.0 * rng.uniform01() - 1.0) * a;
      return Tensor::from({rows, cols}, std::move(v), true);
    };
    auto vec = [&](double fill) { return Tensor::full({d}, fill, true); };
    item_emb_ = xavier(cfg_.vocab + 1, d);
    std::fill_n(item_emb_.mutable_values().data() + cfg_.vocab * d, d, 0.0);
    pos_emb_ = xavier(cfg_.max_len, d);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      Layer L;
      L.wq = xavier(d, d); L.bq = vec(0.0);
      L.wk = xavier(d, d); L.bk = vec(0.0);
      L.wv = xavier(d, d); L.bv = vec(0.0);
      L.wo = xavier(d, d); L.bo = vec(0.0);
      L.ln1_gain = vec(1.0); L.ln1_bias = vec(0.0);
      L.w1 = xavier(d, d); L.b1 = vec(0.0);
      L.w2 = xavier(d, d); L.b2 = vec(0.0);
      L.ln2_gain = vec(1.0); L.ln2_bias = vec(0.0);
      layers_.push_back(std::move(L));
    }
    final_gain_ = vec(1.0);
    final_bias_ = vec(0.0);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::int32_t pad_id() const { return static_cast<std::int32_t>(cfg_.vocab); }
  const Tensor& item_embeddings() const { return item_emb_; }

  /// (name, tensor) for every trainable parameter, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out{{"item_emb", item_emb_}, {"pos_emb", pos_emb_}};
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      for (auto& [n, t] : std::vector<std::pair<const char*, const Tensor*>>{
               {"attn.wq", &L.wq}, {"attn.bq", &L.bq}, {"attn.wk", &L.wk}, {"attn.bk", &L.bk},
               {"attn.wv", &L.wv}, {"attn.bv", &L.bv}, {"attn.wo", &L.wo}, {"attn.bo", &L.bo},
               {"ln1.gain", &L.ln1_gain}, {"ln1.bias", &L.ln1_bias}, {"ffn.w1", &L.w1}, {"ffn.b1", &L.b1},
               {"ffn.w2", &L.w2}, {"ffn.b2", &L.b2}, {"ln2.gain", &L.ln2_gain}, {"ln2.bias", &L.ln2_bias}}) {
        out.emplace_back(p + n, *t);
      }
    }
    if (!cfg_.post_norm) {
      out.emplace_back("final_ln.gain", final_gain_);
      out.emplace_back("final_ln.bias", final_bias_);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [n, t] : named_parameters()) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto t : parameters()) t.zero_grad();
  }

  Model clone() const {
    Model m(cfg_);
    auto src = named_parameters();
    auto dst = m.named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      auto v = src[i].second.values();
      std::copy(v.begin(), v.end(), dst[i].second.mutable_values().begin());
    }
    return m;
  }

  /// Encodes a [b x width] id grid (pad_id past each row's end) into
  /// [b*width, d] hidden states. Row t depends only on ids at positions <= t.
  /// Dropout draws from `rng` and is only applied when training.
  Tensor forward(std::span<const std::int32_t> ids, std::size_t b, std::size_t width, bool training,
                 CounterRng* rng = nullptr) const {
    const std::size_t d = cfg_.hidden_dim;
    const std::size_t h = cfg_.num_heads;
    const std::size_t dh = d / h;
    if (ids.size() != b * width) throw DimensionError("forward: id grid size does not match b x width");
    if (width > cfg_.max_len) {
      throw DimensionError("forward: width " + std::to_string(width) + " exceeds max_len " + std::to_string(cfg_.max_len));
    }
    const bool drop = training && cfg_.dropout > 0.0;
    if (drop && rng == nullptr) throw ConfigError("training forward with dropout needs an RNG");

    std::vector<std::int64_t> item_ids(ids.size()), pos_ids(ids.size());
    std::vector<double> keep(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) > cfg_.vocab) {
        throw IndexError("forward: item id " + std::to_string(ids[i]) + " outside vocabulary of " +
                         std::to_string(cfg_.vocab));
      }
      item_ids[i] = ids[i];
      pos_ids[i] = static_cast<std::int64_t>(i % width);
      std::fill_n(keep.data() + i * d, d, ids[i] == pad_id() ? 0.0 : 1.0);
    }
    const Tensor timeline = Tensor::from({ids.size(), d}, std::move(keep));

    std::vector<double> causal(b * h * width * width, 0.0);
    for (std::size_t q = 0; q < b * h; ++q)
      for (std::size_t i = 0; i < width; ++i)
        for (std::size_t j = i + 1; j < width; ++j)
          causal[(q * width + i) * width + j] = -std::numeric_limits<double>::infinity();
    const Tensor causal_mask = Tensor::from({b * h, width, width}, std::move(causal));

    auto maybe_drop = [&](const Tensor& x) { return drop ? dropout(x, cfg_.dropout, *rng, true) : x; };
    auto linear = [](const Tensor& x, const Tensor& w, const Tensor& bias) { return add_bias(matmul(x, w), bias); };
    auto split = [&](const Tensor& x) {  // [b*T, d] -> [b*h, T, dh]
      return reshape(swap_axes_12(reshape(x, {b, width, h, dh})), {b * h, width, dh});
    };
    auto attention = [&](const Layer& L, const Tensor& x) {
      const Tensor q = split(linear(x, L.wq, L.bq));
      const Tensor k = split(linear(x, L.wk, L.bk));
      const Tensor v = split(linear(x, L.wv, L.bv));
      Tensor scores = add(scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))), causal_mask);
      Tensor weights = maybe_drop(softmax(scores, -1));
      Tensor ctx = reshape(swap_axes_12(reshape(bmm(weights, v), {b, h, width, dh})), {b * width, d});
      return linear(ctx, L.wo, L.bo);
    };
    auto ffn = [&](const Layer& L, const Tensor& x) {
      return linear(maybe_drop(relu(linear(x, L.w1, L.b1))), L.w2, L.b2);
    };

    Tensor x = scale(gather_rows(item_emb_, item_ids), std::sqrt(static_cast<double>(d)));
    x = add(x, gather_rows(pos_emb_, pos_ids));
    x = mul(maybe_drop(x), timeline);
    for (const auto& L : layers_) {
      if (cfg_.post_norm) {
        x = layer_norm(add(x, maybe_drop(attention(L, x))), L.ln1_gain, L.ln1_bias, cfg_.ln_eps);
        x = layer_norm(add(x, maybe_drop(ffn(L, x))), L.ln2_gain, L.ln2_bias, cfg_.ln_eps);
      } else {
        x = add(x, maybe_drop(attention(L, layer_norm(x, L.ln1_gain, L.ln1_bias, cfg_.ln_eps))));
        x = add(x, maybe_drop(ffn(L, layer_norm(x, L.ln2_gain, L.ln2_bias, cfg_.ln_eps))));
      }
      x = mul(x, timeline);
    }
    if (!cfg_.post_norm) x = mul(layer_norm(x, final_gain_, final_bias_, cfg_.ln_eps), timeline);
    return x;
  }

  Tensor forward(const SessionBatch& batch, bool training, CounterRng* rng = nullptr) const {
    if (batch.pad_id != pad_id()) throw ConfigError("batch pad id does not match the model vocabulary");
    return forward(batch.item_ids, batch.batch_size, batch.width, training, rng);
  }

  /// <hidden[r], e_target[r]> for each row: [R].
  Tensor score_targets(const Tensor& hidden, std::span<const std::int32_t> targets) const {
    check_item_ids(targets);
    std::vector<std::size_t> groups(targets.size());
    std::iota(groups.begin(), groups.end(), std::size_t{0});
    return reshape(score_rows(hidden, item_emb_, targets, 1, groups), {targets.size()});
  }

  /// Scores rows against their negative group: [R, negs.count()].
  Tensor score_negatives(const Tensor& hidden, const NegativeSet& negs, std::span<const std::size_t> row_group) const {
    check_item_ids(negs.ids);
    return score_rows(hidden, item_emb_, negs.ids, negs.count(), row_group);
  }

  /// Scores each row against its own id list (ids is [R, k]).
  Tensor score_ids(const Tensor& hidden, std::span<const std::int32_t> ids, std::size_t k) const {
    check_item_ids(ids);
    std::vector<std::size_t> groups(hidden.dim(0));
    std::iota(groups.begin(), groups.end(), std::size_t{0});
    return score_rows(hidden, item_emb_, ids, k, groups);
  }

  /// Full-catalog scores for items [begin, end) (pad row never included):
  /// row-major [R, end - begin]. No graph is recorded. Each score is summed
  /// over the hidden axis in index order, so a score does not depend on how
  /// the catalog is chunked and matches item_score() bit for bit.
  std::vector<double> score_range(std::span<const double> hidden, std::size_t rows, std::size_t begin,
                                  std::size_t end) const {
    const std::size_t d = cfg_.hidden_dim;
    end = std::min(end, cfg_.vocab);
    const std::size_t n = end > begin ? end - begin : 0;
    std::vector<double> et(d * n);  // transposed slice [d, n]
    const double* E = item_emb_.values().data();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) et[c * n + j] = E[(begin + j) * d + c];
    std::vector<double> out(rows * n, 0.0);
    constexpr std::size_t kRowBlock = 8;
    for (std::size_t r0 = 0; r0 < rows; r0 += kRowBlock) {
      const std::size_t r1 = std::min(rows, r0 + kRowBlock);
      for (std::size_t c = 0; c < d; ++c) {
        const double* ec = et.data() + c * n;
        for (std::size_t r = r0; r < r1; ++r) {
          const double hv = hidden[r * d + c];
          double* o = out.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) o[j] += hv * ec[j];
        }
      }
    }
    return out;
  }

  /// Same arithmetic as score_range for a single (row, item) pair.
  double item_score(std::span<const double> h, std::int32_t item) const {
    const std::size_t d = cfg_.hidden_dim;
    const double* e = item_emb_.values().data() + static_cast<std::size_t>(item) * d;
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += h[c] * e[c];
    return acc;
  }

  std::vector<double> score_all(std::span<const double> hidden, std::size_t rows) const {
    return score_range(hidden, rows, 0, cfg_.vocab);
  }

  /// Per-row top-k item ids over the full catalog, best first, ties to the
  /// lower id. chunk > 0 streams the catalog in item chunks and merges the
  /// partial lists.
  std::vector<std::vector<std::int32_t>> topk_all(std::span<const double> hidden, std::size_t rows, std::size_t k,
                                                  std::size_t chunk = 0) const {
    k = std::min(k, cfg_.vocab);
    if (chunk == 0) chunk = cfg_.vocab;
    std::vector<std::vector<std::pair<double, std::int32_t>>> best(rows);
    auto better = [](const std::pair<double, std::int32_t>& a, const std::pair<double, std::int32_t>& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    for (std::size_t begin = 0; begin < cfg_.vocab; begin += chunk) {
      const std::size_t end = std::min(cfg_.vocab, begin + chunk);
      const auto scores = score_range(hidden, rows, begin, end);
      for (std::size_t r = 0; r < rows; ++r) {
        auto& cand = best[r];
        for (std::size_t j = begin; j < end; ++j) {
          cand.emplace_back(scores[r * (end - begin) + (j - begin)], static_cast<std::int32_t>(j));
        }
        const auto keep = std::min(k, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);
        cand.resize(keep);
      }
    }
    std::vector<std::vector<std::int32_t>> out(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (const auto& [s, id] : best[r]) out[r].push_back(id);
    return out;
  }

 private:
  void check_item_ids(std::span<const std::int32_t> ids) const {
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
        throw IndexError("item id " + std::to_string(id) + " outside catalog of " + std::to_string(cfg_.vocab));
      }
    }
  }

  ModelConfig cfg_;
  Tensor item_emb_, pos_emb_;
  std::vector<Layer> layers_;
  Tensor final_gain_, final_bias_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  std::uint64_t epoch = 0;
  std::vector<std::pair<std::string, std::vector<double>>> params;
  bool has_optimizer = false;
  std::uint64_t optimizer_steps = 0;
  std::vector<std::vector<double>> adam_m, adam_v;
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'T', 'R', 'O', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

inline void put_vec(std::ostream& os, const std::vector<double>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> get_vec(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (std::uint64_t{1} << 34)) throw IoError("corrupt checkpoint array length");
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace ckpt_detail

/// Versioned binary blob: magic, version, config header, named parameter
/// table, optional Adam state.
inline void save_checkpoint(const std::filesystem::path& path, const Model& model, const Adam* optimizer = nullptr,
                            std::uint64_t epoch = 0) {
  using namespace ckpt_detail;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  const auto& c = model.config();
  os.write(kMagic, 8);
  put(os, kVersion);
  put<std::uint64_t>(os, c.vocab);
  put<std::uint64_t>(os, c.hidden_dim);
  put<std::uint64_t>(os, c.num_layers);
  put<std::uint64_t>(os, c.num_heads);
  put<std::uint64_t>(os, c.max_len);
  put<double>(os, c.dropout);
  put<std::uint8_t>(os, c.post_norm ? 1 : 0);
  put<double>(os, c.ln_eps);
  put<std::uint64_t>(os, c.init_seed);
  put<std::uint64_t>(os, epoch);
  const auto params = model.named_parameters();
  put<std::uint64_t>(os, params.size());
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto dim : t.shape()) put<std::uint64_t>(os, dim);
    put_vec(os, std::vector<double>(t.values().begin(), t.values().end()));
  }
  put<std::uint8_t>(os, optimizer ? 1 : 0);
  if (optimizer) {
    put<std::uint64_t>(os, optimizer->steps());
    put<std::uint64_t>(os, optimizer->first_moments().size());
    for (std::size_t i = 0; i < optimizer->first_moments().size(); ++i) {
      put_vec(os, optimizer->first_moments()[i]);
      put_vec(os, optimizer->second_moments()[i]);
    }
  }
  if (!os) throw IoError("write failed for checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError(path.string() + " is not a checkpoint");
  if (get<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
  Checkpoint ck;
  ck.config.vocab = get<std::uint64_t>(is);
  ck.config.hidden_dim = get<std::uint64_t>(is);
  ck.config.num_layers = get<std::uint64_t>(is);
  ck.config.num_heads = get<std::uint64_t>(is);
  ck.config.max_len = get<std::uint64_t>(is);
  ck.config.dropout = get<double>(is);
  ck.config.post_norm = get<std::uint8_t>(is) != 0;
  ck.config.ln_eps = get<double>(is);
  ck.config.init_seed = get<std::uint64_t>(is);
  ck.epoch = get<std::uint64_t>(is);
  const auto n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) (void)get<std::uint64_t>(is);
    ck.params.emplace_back(std::move(name), get_vec(is));
  }
  ck.has_optimizer = get<std::uint8_t>(is) != 0;
  if (ck.has_optimizer) {
    ck.optimizer_steps = get<std::uint64_t>(is);
    const auto k = get<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < k; ++i) {
      ck.adam_m.push_back(get_vec(is));
      ck.adam_v.push_back(get_vec(is));
    }
  }
  return ck;
}

/// Rebuilds the model stored in a checkpoint; restores optimizer moments into
/// `optimizer` when both are present.
inline Model load_checkpoint(const std::filesystem::path& path, Adam* optimizer = nullptr,
                             std::uint64_t* epoch = nullptr) {
  auto ck = read_checkpoint(path);
  Model model(ck.config);
  auto params = model.named_parameters();
  if (params.size() != ck.params.size()) throw IoError("checkpoint parameter table does not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    if (name != ck.params[i].first || t.numel() != ck.params[i].second.size()) {
      throw IoError("checkpoint parameter '" + ck.params[i].first + "' does not match model layout");
    }
    std::copy(ck.params[i].second.begin(), ck.params[i].second.end(), t.mutable_values().begin());
  }
  if (optimizer && ck.has_optimizer) {
    optimizer->restore(ck.optimizer_steps, std::move(ck.adam_m), std::move(ck.adam_v));
  }
  if (epoch) *epoch = ck.epoch;
  return model;
}

}  // namespace tron
