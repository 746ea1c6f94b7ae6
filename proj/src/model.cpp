// Copyright 2026 The rinslab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rins/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace rins {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void RecursionPolicy::validate() const {
  if (r_max < 1) throw std::invalid_argument("policy.r_max: must be >= 1");
  if (!(p_skip >= 0.0 && p_skip < 1.0)) {
    throw std::invalid_argument("policy.p_skip: must lie in [0, 1)");
  }
  if (inference_rounds &&
      (*inference_rounds < 1 || *inference_rounds > r_max)) {
    throw std::invalid_argument("policy.inference_rounds: must lie in [1, " +
                                std::to_string(r_max) + "]");
  }
}

nlohmann::json to_json(const RecursionPolicy& policy) {
  nlohmann::json j = {{"r_max", policy.r_max},
                      {"p_skip", policy.p_skip},
                      {"kv_share", policy.kv_share},
                      {"adapters", policy.adapters}};
  j["inference_rounds"] = policy.inference_rounds
                              ? nlohmann::json(*policy.inference_rounds)
                              : nlohmann::json(nullptr);
  return j;
}

RecursionPolicy policy_from_json(const nlohmann::json& j) {
  RecursionPolicy p;
  p.r_max = j.at("r_max").get<int>();
  p.p_skip = j.at("p_skip").get<double>();
  p.kv_share = j.at("kv_share").get<bool>();
  p.adapters = j.at("adapters").get<bool>();
  if (j.contains("inference_rounds") && !j["inference_rounds"].is_null()) {
    p.inference_rounds = j["inference_rounds"].get<int>();
  }
  p.validate();
  return p;
}

int sample_rounds(const RecursionPolicy& policy, std::mt19937_64& rng) {
  const int trials = policy.r_max - 1;
  if (trials <= 0) return 1;
  std::binomial_distribution<int> binomial(trials, 1.0 - policy.p_skip);
  return 1 + binomial(rng);
}

std::int64_t kv_cache_bytes(const ModelDims& dims, int layers_of_a,
                            const RecursionPolicy& policy, int rounds,
                            std::size_t element_size) {
  if (rounds < 1 || rounds > policy.r_max) {
    throw std::out_of_range("rounds must lie in [1, r_max]");
  }
  const std::int64_t per_call = std::int64_t{layers_of_a} * 2 * dims.seq_len *
                                dims.d_model *
                                static_cast<std::int64_t>(element_size);
  return policy.kv_share ? per_call : per_call * rounds;
}

// ---------------------------------------------------------------------------
// ModelParams

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelDims& dims, int unique_leaves,
                                     int layers_per_block, int adapter_count) {
  ModelParams p;
  const int d = dims.d_model;
  p.token_embedding = Matrix<T>::Zero(dims.vocab, d);
  p.position_embedding = Matrix<T>::Zero(dims.seq_len, d);
  p.blocks.assign(static_cast<std::size_t>(unique_leaves), {});
  for (auto& block : p.blocks) {
    for (int l = 0; l < layers_per_block; ++l) {
      block.push_back(LayerParams<T>::zeros(d, dims.mlp_dim));
    }
  }
  p.final_scale = RowVector<T>::Zero(d);
  p.final_bias = RowVector<T>::Zero(d);
  p.head = Matrix<T>::Zero(d, dims.vocab);
  p.head_bias = RowVector<T>::Zero(dims.vocab);
  p.adapters.assign(static_cast<std::size_t>(adapter_count),
                    Matrix<T>::Zero(d, d));
  return p;
}

template <typename T>
std::vector<std::span<T>> ModelParams<T>::spans() {
  std::vector<std::span<T>> out;
  for_each(*this, [&](const std::string&, auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

template <typename T>
std::vector<std::span<const T>> ModelParams<T>::spans() const {
  std::vector<std::span<const T>> out;
  for_each(*this, [&](const std::string&, const auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

template <typename T>
std::int64_t ModelParams<T>::size() const {
  std::int64_t n = 0;
  for_each(*this, [&](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

template <typename T>
std::int64_t ModelParams<T>::adapter_size() const {
  std::int64_t n = 0;
  for (const auto& a : adapters) n += a.size();
  return n;
}

template <typename T>
std::int64_t ModelParams<T>::embedding_size() const {
  return token_embedding.size() + position_embedding.size() + head.size() +
         head_bias.size();
}

template <typename T>
std::int64_t ForwardTape<T>::kv_bytes(int leaf) const {
  std::int64_t bytes = 0;
  for (std::size_t c = 0; c < calls.size(); ++c) {
    if (leaves[c] != leaf) continue;
    for (const auto& layer : calls[c]) {
      bytes += static_cast<std::int64_t>(layer.k.size() + layer.v.size()) *
               static_cast<std::int64_t>(sizeof(T));
    }
  }
  return bytes;
}

// ---------------------------------------------------------------------------
// Loss helpers

template <typename T>
Matrix<T> log_softmax(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    const T lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

template <typename T>
T cross_entropy(const Matrix<T>& logits, std::span<const std::int32_t> targets,
                Matrix<T>* dlogits) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("targets length " +
                                std::to_string(targets.size()) +
                                " does not match " +
                                std::to_string(logits.rows()) + " logit rows");
  }
  const Eigen::Index vocab = logits.cols();
  std::int64_t count = 0;
  for (auto t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= vocab) {
      throw std::out_of_range("target id " + std::to_string(t) +
                              " outside vocabulary");
    }
    ++count;
  }
  if (dlogits) dlogits->setZero(logits.rows(), vocab);
  if (count == 0) return T(0);
  const T inv = T(1) / static_cast<T>(count);
  T total = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const std::int32_t t = targets[static_cast<std::size_t>(r)];
    if (t == kIgnoreTarget) continue;
    const T m = logits.row(r).maxCoeff();
    const auto shifted = (logits.row(r).array() - m).exp();
    const T sum = shifted.sum();
    total += m + std::log(sum) - logits(r, t);
    if (dlogits) {
      dlogits->row(r) = (shifted / sum * inv).matrix();
      (*dlogits)(r, t) -= inv;
    }
  }
  return total * inv;
}

// ---------------------------------------------------------------------------
// RecursiveTransformer

template <typename T>
RecursiveTransformer<T>::RecursiveTransformer(const Signature& signature,
                                              const ModelDims& dims,
                                              const RecursionPolicy& policy)
    : plan_(expand(signature)), dims_(dims), policy_(policy) {
  dims_.validate();
  policy_.validate();
  layers_per_block_ = feasible_layers_per_block(plan_, dims_);
  rins_r_ = rins_rounds(plan_.source);
  if (rins_r_ >= 1) {
    if (policy_.r_max != rins_r_) {
      throw std::invalid_argument(
          "policy.r_max: signature " + plan_.source.render_spec() +
          " recurses " + std::to_string(rins_r_) + " times but r_max is " +
          std::to_string(policy_.r_max));
    }
  } else {
    if (policy_.r_max != 1) {
      throw std::invalid_argument(
          "policy.r_max: only A^r B signatures support recursion rounds");
    }
    if (policy_.kv_share || policy_.adapters || policy_.p_skip > 0.0) {
      throw std::invalid_argument(
          "policy: KV sharing, adapters and round skipping need an A^r B "
          "signature");
    }
  }
  params_ = ModelParams<T>::zeros(dims_, plan_.unique_leaf_count,
                                  layers_per_block_,
                                  policy_.adapters ? policy_.r_max : 0);
}

template <typename T>
void RecursiveTransformer<T>::init(std::uint64_t seed, double init_std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_std);
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  ModelParams<T>::for_each(params_, [&](const std::string& name, auto& t) {
    if (name.rfind("adapter.", 0) == 0) {
      t.setIdentity();
    } else if (ends_with(name, ".scale")) {
      t.setOnes();
    } else if (ends_with(name, "bias")) {
      t.setZero();
    } else {
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        t.data()[i] = static_cast<T>(normal(rng));
      }
    }
  });
}

template <typename T>
std::vector<int> RecursiveTransformer<T>::execution_sequence(int rounds) const {
  if (rins_r_ >= 1) {
    if (rounds < 1 || rounds > rins_r_) {
      throw std::out_of_range("rounds " + std::to_string(rounds) +
                              " outside [1, " + std::to_string(rins_r_) + "]");
    }
    std::vector<int> seq(static_cast<std::size_t>(rounds), 0);
    seq.push_back(1);
    return seq;
  }
  if (rounds != 1) {
    throw std::out_of_range("signature " + plan_.source.render_spec() +
                            " only supports rounds = 1");
  }
  return plan_.leaf_sequence;
}

template <typename T>
void RecursiveTransformer<T>::check_tokens(const TokenBatch& tokens) const {
  if (tokens.batch < 1 || tokens.seq < 1 ||
      tokens.ids.size() != static_cast<std::size_t>(tokens.batch) * tokens.seq) {
    throw std::invalid_argument("malformed token batch");
  }
  if (tokens.seq > dims_.seq_len) {
    throw std::out_of_range("sequence length " + std::to_string(tokens.seq) +
                            " exceeds context " +
                            std::to_string(dims_.seq_len));
  }
  for (auto id : tokens.ids) {
    if (id < 0 || id >= dims_.vocab) {
      throw std::out_of_range("token id " + std::to_string(id) +
                              " outside vocabulary of " +
                              std::to_string(dims_.vocab));
    }
  }
}

template <typename T>
ForwardTape<T> RecursiveTransformer<T>::forward_sequence(
    const TokenBatch& tokens, std::span<const int> leaves, int adapter_rounds,
    std::span<const int> segments) const {
  check_tokens(tokens);
  if (!segments.empty() && segments.size() != tokens.size()) {
    throw std::invalid_argument("segment ids must match the token batch");
  }
  for (int leaf : leaves) {
    if (leaf < 0 || leaf >= plan_.unique_leaf_count) {
      throw std::out_of_range("leaf id outside the plan");
    }
  }
  ForwardTape<T> tape;
  tape.tokens = tokens;
  tape.shape = {tokens.batch, tokens.seq, dims_.n_heads};
  tape.leaves.assign(leaves.begin(), leaves.end());
  const int n_calls = static_cast<int>(leaves.size());

  if (adapter_rounds > 0) {
    if (static_cast<std::size_t>(adapter_rounds) > params_.adapters.size()) {
      throw std::out_of_range("no adapter for " +
                              std::to_string(adapter_rounds) + " rounds");
    }
    int last = -1;
    while (last + 1 < n_calls && leaves[static_cast<std::size_t>(last + 1)] == 0) ++last;
    tape.adapter_after = last;
    tape.adapter_index = adapter_rounds - 1;
  }

  tape.kv_owner.resize(static_cast<std::size_t>(n_calls));
  std::vector<int> first_call(static_cast<std::size_t>(plan_.unique_leaf_count), -1);
  for (int c = 0; c < n_calls; ++c) {
    const int leaf = leaves[static_cast<std::size_t>(c)];
    auto& first = first_call[static_cast<std::size_t>(leaf)];
    if (first < 0) first = c;
    tape.kv_owner[static_cast<std::size_t>(c)] =
        (policy_.kv_share && leaf == 0) ? first : c;
  }
  tape.calls.assign(static_cast<std::size_t>(n_calls),
                    std::vector<LayerCache<T>>(static_cast<std::size_t>(layers_per_block_)));

  Matrix<T> x = embed_tokens(params_.token_embedding,
                             params_.position_embedding, tokens);

  const AttentionMask mask{segments};
  for (int c = 0; c < n_calls; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    const auto& block = params_.blocks[static_cast<std::size_t>(tape.leaves[uc])];
    const int owner = tape.kv_owner[uc];
    for (int l = 0; l < layers_per_block_; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      const LayerCache<T>* borrowed =
          owner == c ? nullptr : &tape.calls[static_cast<std::size_t>(owner)][ul];
      x = layer_forward(block[ul], x, tape.shape, mask, tape.calls[uc][ul],
                        borrowed);
    }
    if (c == tape.adapter_after) {
      tape.adapter_input = x;
      x.noalias() = tape.adapter_input *
                    params_.adapters[static_cast<std::size_t>(tape.adapter_index)];
    }
  }

  tape.final_hidden = layer_norm_forward(x, params_.final_scale,
                                         params_.final_bias, tape.final_xhat,
                                         tape.final_rstd);
  tape.logits = linear_forward(tape.final_hidden, params_.head,
                               params_.head_bias);
  return tape;
}

template <typename T>
ForwardTape<T> RecursiveTransformer<T>::forward_tape(
    const TokenBatch& tokens, int rounds, std::span<const int> segments) const {
  const std::vector<int> seq = execution_sequence(rounds);
  return forward_sequence(tokens, seq, policy_.adapters ? rounds : 0,
                          segments);
}

template <typename T>
Matrix<T> RecursiveTransformer<T>::forward(const TokenBatch& tokens,
                                           int rounds,
                                           std::span<const int> segments) const {
  return forward_tape(tokens, rounds, segments).logits;
}

template <typename T>
T RecursiveTransformer<T>::loss(const TokenBatch& tokens,
                                std::span<const std::int32_t> targets,
                                int rounds,
                                std::span<const int> segments) const {
  return cross_entropy<T>(forward(tokens, rounds, segments), targets, nullptr);
}

template <typename T>
ModelParams<T> RecursiveTransformer<T>::zero_grads() const {
  return ModelParams<T>::zeros(dims_, plan_.unique_leaf_count,
                               layers_per_block_,
                               static_cast<int>(params_.adapters.size()));
}

template <typename T>
LossAndGrads<T> RecursiveTransformer<T>::loss_and_grads(
    const TokenBatch& tokens, std::span<const std::int32_t> targets,
    int rounds, std::span<const int> segments) const {
  const ForwardTape<T> tape = forward_tape(tokens, rounds, segments);
  Matrix<T> dlogits;
  LossAndGrads<T> out;
  out.loss = cross_entropy<T>(tape.logits, targets, &dlogits);
  out.grads = zero_grads();
  backward(tape, dlogits, out.grads);
  return out;
}

template <typename T>
void RecursiveTransformer<T>::backward(const ForwardTape<T>& tape,
                                       const Matrix<T>& dlogits,
                                       ModelParams<T>& grads) const {
  const Matrix<T> dhidden = linear_backward(
      tape.final_hidden, params_.head, dlogits, grads.head, grads.head_bias);
  Matrix<T> dx = layer_norm_backward(dhidden, tape.final_xhat, tape.final_rstd,
                                     params_.final_scale, grads.final_scale,
                                     grads.final_bias);

  const int n_calls = static_cast<int>(tape.calls.size());
  std::vector<std::vector<KvGrad<T>>> kv_acc(
      static_cast<std::size_t>(n_calls),
      std::vector<KvGrad<T>>(static_cast<std::size_t>(layers_per_block_)));

  for (int c = n_calls - 1; c >= 0; --c) {
    const auto uc = static_cast<std::size_t>(c);
    if (c == tape.adapter_after) {
      const auto ua = static_cast<std::size_t>(tape.adapter_index);
      grads.adapters[ua].noalias() += tape.adapter_input.transpose() * dx;
      dx = dx * params_.adapters[ua].transpose();
    }
    const auto leaf = static_cast<std::size_t>(tape.leaves[uc]);
    const int owner = tape.kv_owner[uc];
    for (int l = layers_per_block_ - 1; l >= 0; --l) {
      const auto ul = static_cast<std::size_t>(l);
      if (owner == c) {
        dx = layer_backward<T>(params_.blocks[leaf][ul], tape.calls[uc][ul], dx,
                            tape.shape, grads.blocks[leaf][ul],
                            &kv_acc[uc][ul], nullptr);
      } else {
        dx = layer_backward<T>(params_.blocks[leaf][ul], tape.calls[uc][ul], dx,
                            tape.shape, grads.blocks[leaf][ul], nullptr,
                            &kv_acc[static_cast<std::size_t>(owner)][ul]);
      }
    }
  }

  embed_backward(dx, tape.tokens, grads.token_embedding,
                 grads.position_embedding);
}

template <typename T>
std::int64_t RecursiveTransformer<T>::kv_cache_bytes(int rounds) const {
  if (rins_r_ < 1) {
    throw std::logic_error("KV cache accounting needs an A^r B signature");
  }
  return rins::kv_cache_bytes(dims_, layers_per_block_, policy_, rounds,
                              sizeof(T));
}

template <typename T>
double RecursiveTransformer<T>::adapter_fraction() const {
  return static_cast<double>(params_.adapter_size()) /
         static_cast<double>(params_.size());
}

template <typename T>
double RecursiveTransformer<T>::adapter_fraction_excluding_embeddings() const {
  return static_cast<double>(params_.adapter_size()) /
         static_cast<double>(params_.size() - params_.embedding_size());
}

template <typename T>
template <typename U>
RecursiveTransformer<U> RecursiveTransformer<T>::cast() const {
  RecursiveTransformer<U> out(plan_.source, dims_, policy_);
  auto dst = out.params().spans();
  const auto src = params_.spans();
  for (std::size_t i = 0; i < src.size(); ++i) {
    for (std::size_t k = 0; k < src[i].size(); ++k) {
      dst[i][k] = static_cast<U>(src[i][k]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'I', 'N', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct RawCheckpoint {
  nlohmann::json manifest;
  std::vector<char> data;
};

RawCheckpoint read_raw(const std::string& path, bool with_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path + " is not a checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint " + path);
  RawCheckpoint raw;
  raw.manifest = nlohmann::json::parse(text);
  if (with_data) {
    raw.data.assign(std::istreambuf_iterator<char>(in),
                    std::istreambuf_iterator<char>());
  }
  return raw;
}

CheckpointInfo info_from_manifest(const nlohmann::json& m) {
  CheckpointInfo info;
  info.signature = parse_spec(m.at("signature").get<std::string>());
  info.dims = dims_from_json(m.at("dims"));
  info.policy = policy_from_json(m.at("policy"));
  info.step = m.at("step").get<std::int64_t>();
  info.dtype = m.at("dtype").get<std::string>();
  info.extra = m.value("extra", nlohmann::json::object());
  return info;
}

template <typename T, typename Src>
void copy_converted(const char* bytes, std::size_t count, T* dst) {
  for (std::size_t i = 0; i < count; ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    dst[i] = static_cast<T>(v);
  }
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::string& path) {
  return info_from_manifest(read_raw(path, false).manifest);
}

template <typename T>
void save_checkpoint(const std::string& path,
                     const RecursiveTransformer<T>& model, std::int64_t step,
                     const std::map<std::string, std::vector<T>>& extra_tensors,
                     const nlohmann::json& extra) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<std::span<const T>> blobs;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, std::span<const T> data) {
    tensors.push_back({{"name", name}, {"offset", offset}, {"count", data.size()}});
    offset += data.size() * sizeof(T);
    blobs.push_back(data);
  };
  ModelParams<T>::for_each(model.params(),
                           [&](const std::string& name, const auto& t) {
                             add(name, {t.data(), static_cast<std::size_t>(t.size())});
                           });
  for (const auto& [name, data] : extra_tensors) add(name, data);

  const nlohmann::json manifest = {
      {"format", "rins-checkpoint"},
      {"version", 1},
      {"signature", model.signature().render_spec()},
      {"dims", to_json(model.dims())},
      {"policy", to_json(model.policy())},
      {"step", step},
      {"dtype", dtype_name<T>()},
      {"extra", extra},
      {"tensors", tensors}};
  const std::string text = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(kMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& blob : blobs) {
      out.write(reinterpret_cast<const char*>(blob.data()),
                static_cast<std::streamsize>(blob.size() * sizeof(T)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot move checkpoint into place at " + path);
  }
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_raw(path, true);
  CheckpointInfo info = info_from_manifest(raw.manifest);
  const bool f32 = info.dtype == "f32";
  const std::size_t elem = f32 ? 4 : 8;

  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> index;
  for (const auto& t : raw.manifest.at("tensors")) {
    index[t.at("name").get<std::string>()] = {t.at("offset").get<std::uint64_t>(),
                                              t.at("count").get<std::uint64_t>()};
  }
  auto read_into = [&](const std::string& name, T* dst, std::size_t count) {
    const auto it = index.find(name);
    if (it == index.end()) {
      throw std::runtime_error("checkpoint " + path + " lacks tensor " + name);
    }
    const auto [off, n] = it->second;
    if (n != count || off + n * elem > raw.data.size()) {
      throw std::runtime_error("checkpoint tensor " + name + " has wrong size");
    }
    if (f32) {
      copy_converted<T, float>(raw.data.data() + off, count, dst);
    } else {
      copy_converted<T, double>(raw.data.data() + off, count, dst);
    }
  };

  LoadedCheckpoint<T> out{RecursiveTransformer<T>(info.signature, info.dims, info.policy),
                          info, {}};
  ModelParams<T>::for_each(out.model.params(),
                           [&](const std::string& name, auto& t) {
                             read_into(name, t.data(), static_cast<std::size_t>(t.size()));
                             index.erase(name);
                           });
  for (const auto& [name, loc] : index) {
    std::vector<T> values(loc.second);
    read_into(name, values.data(), values.size());
    out.extra_tensors.emplace(name, std::move(values));
  }
  return out;
}

#define RINS_INSTANTIATE_MODEL(T)                                              \
  template struct ModelParams<T>;                                              \
  template struct ForwardTape<T>;                                              \
  template class RecursiveTransformer<T>;                                      \
  template T cross_entropy<T>(const Matrix<T>&, std::span<const std::int32_t>, \
                              Matrix<T>*);                                     \
  template Matrix<T> log_softmax<T>(const Matrix<T>&);                         \
  template void save_checkpoint<T>(                                            \
      const std::string&, const RecursiveTransformer<T>&, std::int64_t,        \
      const std::map<std::string, std::vector<T>>&, const nlohmann::json&);    \
  template LoadedCheckpoint<T> load_checkpoint<T>(const std::string&);

RINS_INSTANTIATE_MODEL(float)
RINS_INSTANTIATE_MODEL(double)

template RecursiveTransformer<double> RecursiveTransformer<float>::cast<double>() const;
template RecursiveTransformer<float> RecursiveTransformer<double>::cast<float>() const;
template RecursiveTransformer<float> RecursiveTransformer<float>::cast<float>() const;
template RecursiveTransformer<double> RecursiveTransformer<double>::cast<double>() const;

#undef RINS_INSTANTIATE_MODEL

}  // namespace rins
