// Copyright (C) 2026 The meeto authors
// SPDX-License-Identifier: Apache-2.0

#include "meeto/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "meeto/error.hpp"
#include "meeto/kv.hpp"
#include "meeto/scan_kernel.hpp"

namespace meeto {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (channels == 0 || depth == 0 || d_model == 0 || d_inner == 0 || d_state == 0 || num_classes == 0) {
    throw ConfigError("depth and all widths must be >= 1");
  }
  reduction.validate(depth);
}

KeyValues model_config_entries(const ModelConfig& cfg) {
  const auto& r = cfg.reduction;
  return {{"image_size", std::to_string(cfg.image_size)},
          {"patch_size", std::to_string(cfg.patch_size)},
          {"channels", std::to_string(cfg.channels)},
          {"depth", std::to_string(cfg.depth)},
          {"d_model", std::to_string(cfg.d_model)},
          {"d_inner", std::to_string(cfg.d_inner)},
          {"d_state", std::to_string(cfg.d_state)},
          {"num_classes", std::to_string(cfg.num_classes)},
          {"r", std::to_string(r.r)},
          {"sites", r.sites.empty() ? std::string("none") : join_sizes(r.sites)},
          {"feature", to_string(r.feature)},
          {"distance", to_string(r.distance)},
          {"merge_op", to_string(r.merge_op)},
          {"grouping", to_string(r.grouping)},
          {"pair_rank", std::to_string(r.pair_rank)},
          {"selection", to_string(r.selection)},
          {"pairing", to_string(r.pairing)},
          {"shuffle_ratio", format_double(r.shuffle_ratio)},
          {"mode", to_string(r.mode)}};
}

bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  auto& r = cfg.reduction;
  if (key == "image_size") cfg.image_size = parse_size(key, value);
  else if (key == "patch_size") cfg.patch_size = parse_size(key, value);
  else if (key == "channels") cfg.channels = parse_size(key, value);
  else if (key == "depth") cfg.depth = parse_size(key, value);
  else if (key == "d_model") cfg.d_model = parse_size(key, value);
  else if (key == "d_inner") cfg.d_inner = parse_size(key, value);
  else if (key == "d_state") cfg.d_state = parse_size(key, value);
  else if (key == "num_classes") cfg.num_classes = parse_size(key, value);
  else if (key == "r") r.r = parse_size(key, value);
  else if (key == "sites") r.sites = parse_size_list(key, value);
  else if (key == "feature") r.feature = parse_feature(value);
  else if (key == "distance") r.distance = parse_distance(value);
  else if (key == "merge_op") r.merge_op = parse_merge_op(value);
  else if (key == "grouping") r.grouping = parse_grouping(value);
  else if (key == "pair_rank") r.pair_rank = parse_size(key, value);
  else if (key == "selection") r.selection = parse_selection(value);
  else if (key == "pairing") r.pairing = parse_pairing(value);
  else if (key == "shuffle_ratio") r.shuffle_ratio = parse_double(key, value);
  else if (key == "mode") r.mode = parse_reduce_mode(value);
  else return false;
  return true;
}

// ---------------------------------------------------------------------------
// Parameters

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.config = cfg;
  m.patch_proj = Parameter("patch_proj", Tensor::normal({cfg.patch_dim(), cfg.d_model},
                                                        1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())), rng));
  m.pos_embed = Parameter("pos_embed", Tensor::normal({cfg.num_tokens(), cfg.d_model}, 0.1, rng));
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    m.blocks.push_back(SsmBlockParams::init(cfg.d_model, cfg.d_inner, cfg.d_state, rng, "blocks." + std::to_string(b)));
  }
  m.norm_f = Parameter("norm_f", Tensor::ones({cfg.d_model}));
  m.head = Parameter("head", Tensor::normal({cfg.d_model, cfg.num_classes},
                                            1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng));
  return m;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out{&patch_proj, &pos_embed};
  for (auto& b : blocks)
    for (auto* p : b.parameters()) out.push_back(p);
  out.push_back(&norm_f);
  out.push_back(&head);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.numel();
  return n;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

Model with_reduction(const Model& model, const ReductionConfig& reduction) {
  Model m = model;
  m.config.reduction = reduction;
  m.config.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Differentiable forward

Tensor extract_patches(const Tensor& images, std::size_t index, std::size_t patch_size) {
  const std::size_t H = images.dim(1), W = images.dim(2), C = images.dim(3);
  const std::size_t gh = H / patch_size, gw = W / patch_size;
  const std::size_t pd = patch_size * patch_size * C;
  Tensor out({gh * gw, pd});
  const double* img = images.data().data() + index * H * W * C;
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = out.data().data() + (py * gw + px) * pd;
      std::size_t k = 0;
      for (std::size_t dy = 0; dy < patch_size; ++dy)
        for (std::size_t dx = 0; dx < patch_size; ++dx)
          for (std::size_t c = 0; c < C; ++c)
            row[k++] = img[((py * patch_size + dy) * W + (px * patch_size + dx)) * C + c];
    }
  return out;
}

namespace {

void check_images(const ModelConfig& cfg, std::size_t rank, std::size_t h, std::size_t w, std::size_t c) {
  if (rank != 4 || h != cfg.image_size || w != cfg.image_size || c != cfg.channels) {
    throw ShapeError("images must be [B," + std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                     "," + std::to_string(cfg.channels) + "]");
  }
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t sample) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(sample >> 32)};
  return std::mt19937_64(seq);
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  const std::size_t F = t.dim(1);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < perm.size(); ++i)
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * F), F,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * F));
  return out;
}

SiteDecision decide_site(const Tensor& feature, const ReductionConfig& red, std::mt19937_64& rng) {
  SiteDecision dec;
  const std::size_t T = feature.dim(0);
  if (red.shuffle_ratio > 0.0) {
    dec.shuffle = shuffle_permutation(T, red.shuffle_ratio, rng);
    dec.plan = plan_reduction(permute_rows(feature, dec.shuffle), red, rng);
  } else {
    dec.plan = plan_reduction(feature, red, rng);
  }
  return dec;
}

std::vector<MergedRow> shuffle_layout(const std::vector<std::size_t>& perm, const std::vector<std::size_t>& positions) {
  std::vector<MergedRow> rows;
  rows.reserve(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) rows.push_back({perm[i], MergedRow::npos, positions[i]});
  return rows;
}

struct SampleRun {
  Var logits;
  std::vector<std::size_t> trace;
  Tensor feature;
};

// Runs one image through the model. When `stop_block` is set, returns after
// that block with its similarity feature instead of logits.
SampleRun run_sample(Tape& tape, Model& model, const Tensor& images, std::size_t b, const ForwardOptions& opts,
                     const Var& proj, const Var& pos, std::optional<std::pair<std::size_t, Feature>> stop = {}) {
  const ModelConfig& cfg = model.config;
  const ReductionConfig& red = cfg.reduction;
  const std::size_t sample = opts.first_sample + b;
  std::mt19937_64 rng = sample_rng(opts.seed, sample);
  SampleRun run;
  Var x = add(matmul(tape.constant(extract_patches(images, b, cfg.patch_size)), proj), pos);
  std::vector<std::size_t> positions(cfg.num_tokens());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  std::size_t site_index = 0;
  for (std::size_t blk = 0; blk < cfg.depth; ++blk) {
    run.trace.push_back(positions.size());
    const BlockOutputs o = block_forward(tape, model.blocks[blk], x);
    x = o.out;
    if (stop && stop->first == blk) {
      run.feature = extract_feature(o, stop->second);
      return run;
    }
    if (!red.is_site(blk)) continue;
    SiteDecision dec;
    if (opts.replay) {
      dec = opts.replay->at(b).at(site_index);
    } else {
      dec = decide_site(extract_feature(o, red.feature), red, rng);
    }
    if (!dec.shuffle.empty()) x = merge_rows(x, shuffle_layout(dec.shuffle, positions), MergeOp::Sum);
    const auto rows = reduction_layout(dec.plan, positions, red.mode);
    x = merge_rows(x, rows, red.merge_op);
    positions.clear();
    for (const auto& row : rows) positions.push_back(row.position);
    if (opts.record) (*opts.record)[b].push_back(std::move(dec));
    ++site_index;
  }
  Var pooled = rms_norm(mean_rows(x), tape.param(model.norm_f));
  run.logits = matmul(pooled, tape.param(model.head));
  return run;
}

}  // namespace

ForwardResult forward(Tape& tape, Model& model, const Tensor& images, const ForwardOptions& opts) {
  const ModelConfig& cfg = model.config;
  if (images.rank() != 4) throw ShapeError("images must be rank 4");
  check_images(cfg, images.rank(), images.dim(1), images.dim(2), images.dim(3));
  const std::size_t B = images.dim(0);
  if (B == 0) throw ShapeError("empty image batch");
  if (opts.record) opts.record->assign(B, {});
  Var proj = tape.param(model.patch_proj);
  Var pos = tape.param(model.pos_embed);
  std::vector<Var> rows;
  ForwardResult result;
  for (std::size_t b = 0; b < B; ++b) {
    SampleRun run = run_sample(tape, model, images, b, opts, proj, pos);
    rows.push_back(run.logits);
    if (b == 0) result.trace = std::move(run.trace);
  }
  result.logits = rows.size() == 1 ? rows[0] : concat_rows(rows);
  return result;
}

Tensor site_feature(Model& model, const Tensor& image, std::size_t block, Feature choice) {
  if (!model.config.reduction.is_site(block)) {
    throw std::invalid_argument("block " + std::to_string(block) + " is not a reduction site");
  }
  check_images(model.config, image.rank(), image.dim(1), image.dim(2), image.dim(3));
  Tape tape;
  Var proj = tape.param(model.patch_proj);
  Var pos = tape.param(model.pos_embed);
  return run_sample(tape, model, image, 0, {}, proj, pos, std::make_pair(block, choice)).feature;
}

// ---------------------------------------------------------------------------
// Inference path

namespace {

template <typename Scalar>
std::vector<Scalar> convert(const Tensor& t) {
  return std::vector<Scalar>(t.data().begin(), t.data().end());
}

// c = a [m,k] * b [k,n]
template <typename Scalar>
void gemm(const Scalar* a, const Scalar* b, Scalar* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, Scalar(0));
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = a[i * k + p];
      if (av == Scalar(0)) continue;
      const Scalar* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Scalar>
Scalar softplus_t(Scalar x) {
  return std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename Scalar>
Scalar silu_t(Scalar x) {
  const Scalar s = x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
  return x * s;
}

template <typename Scalar>
void rms_norm_rows(const Scalar* x, const Scalar* w, Scalar* out, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += x[r * d + j] * x[r * d + j];
    const Scalar inv = Scalar(1) / std::sqrt(ms / static_cast<Scalar>(d) + static_cast<Scalar>(1e-6));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] * inv * w[j];
  }
}

template <typename Scalar>
Tensor to_tensor(const std::vector<Scalar>& v, std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols}, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

template <typename Scalar>
InferenceModel<Scalar>::InferenceModel(const Model& model)
    : config_(model.config),
      patch_proj_(convert<Scalar>(model.patch_proj.value)),
      pos_embed_(convert<Scalar>(model.pos_embed.value)),
      norm_f_(convert<Scalar>(model.norm_f.value)),
      head_(convert<Scalar>(model.head.value)) {
  config_.validate();
  auto direction = [](const SsmDirectionParams& p) {
    Direction d;
    d.a.resize(p.a_log.value.numel());
    for (std::size_t i = 0; i < d.a.size(); ++i) d.a[i] = static_cast<Scalar>(-std::exp(p.a_log.value[i]));
    d.w_b = convert<Scalar>(p.w_b.value);
    d.w_c = convert<Scalar>(p.w_c.value);
    d.w_delta = convert<Scalar>(p.w_delta.value);
    d.delta_bias = static_cast<Scalar>(p.delta_bias.value.item());
    return d;
  };
  for (const auto& b : model.blocks) {
    blocks_.push_back({convert<Scalar>(b.norm.value), convert<Scalar>(b.w_in.value), convert<Scalar>(b.w_gate.value),
                       convert<Scalar>(b.w_out.value), direction(b.fwd), direction(b.bwd)});
  }
}

template <typename Scalar>
typename InferenceModel<Scalar>::Output InferenceModel<Scalar>::forward(std::span<const Scalar> images,
                                                                        std::size_t batch,
                                                                        const ForwardOptions& opts) const {
  const ModelConfig& cfg = config_;
  const ReductionConfig& red = cfg.reduction;
  const std::size_t S = cfg.image_size, C = cfg.channels, P = cfg.patch_size, G = cfg.grid();
  const std::size_t T0 = cfg.num_tokens(), Dm = cfg.d_model, D = cfg.d_inner, N = cfg.d_state;
  const std::size_t K = cfg.num_classes, pd = cfg.patch_dim();
  if (images.size() != batch * S * S * C) throw ShapeError("inference: image buffer size mismatch");
  if (opts.record) opts.record->assign(batch, {});

  Output out;
  out.logits.resize(batch * K);
  std::vector<Scalar> x, u, xin, gate, ssm, y_f, y_b, delta_f, delta_b, b_f, b_b, c_f, c_b, h(D * N), tmp, patches;

  for (std::size_t bi = 0; bi < batch; ++bi) {
    std::mt19937_64 rng = sample_rng(opts.seed, opts.first_sample + bi);
    const Scalar* img = images.data() + bi * S * S * C;
    patches.assign(T0 * pd, Scalar(0));
    for (std::size_t py = 0; py < G; ++py)
      for (std::size_t px = 0; px < G; ++px) {
        Scalar* row = patches.data() + (py * G + px) * pd;
        std::size_t k = 0;
        for (std::size_t dy = 0; dy < P; ++dy)
          for (std::size_t dx = 0; dx < P; ++dx)
            for (std::size_t c = 0; c < C; ++c) row[k++] = img[((py * P + dy) * S + (px * P + dx)) * C + c];
      }
    x.resize(T0 * Dm);
    gemm(patches.data(), patch_proj_.data(), x.data(), T0, pd, Dm);
    for (std::size_t i = 0; i < T0 * Dm; ++i) x[i] += pos_embed_[i];

    std::size_t T = T0;
    std::vector<std::size_t> positions(T0);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    std::vector<std::size_t> trace;
    std::size_t site_index = 0;

    for (std::size_t blk = 0; blk < cfg.depth; ++blk) {
      trace.push_back(T);
      const Block& bp = blocks_[blk];
      u.resize(T * Dm);
      rms_norm_rows(x.data(), bp.norm.data(), u.data(), T, Dm);
      xin.resize(T * D);
      gate.resize(T * D);
      gemm(u.data(), bp.w_in.data(), xin.data(), T, Dm, D);
      gemm(u.data(), bp.w_gate.data(), gate.data(), T, Dm, D);
      for (auto& v : xin) v = silu_t(v);
      for (auto& v : gate) v = silu_t(v);

      auto run_dir = [&](const Direction& dp, ScanDirection dir, std::vector<Scalar>& delta, std::vector<Scalar>& bm,
                         std::vector<Scalar>& cm, std::vector<Scalar>& y) {
        delta.resize(T * D);
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t d = 0; d < D; ++d)
            delta[t * D + d] = softplus_t(xin[t * D + d] * dp.w_delta[d] + dp.delta_bias);
        bm.resize(T * N);
        cm.resize(T * N);
        gemm(xin.data(), dp.w_b.data(), bm.data(), T, D, N);
        gemm(xin.data(), dp.w_c.data(), cm.data(), T, D, N);
        y.resize(T * D);
        scan_sequence<Scalar>({T, D, N}, xin.data(), delta.data(), dp.a.data(), bm.data(), cm.data(), dir, h.data(),
                              y.data());
      };
      run_dir(bp.fwd, ScanDirection::Forward, delta_f, b_f, c_f, y_f);
      run_dir(bp.bwd, ScanDirection::Backward, delta_b, b_b, c_b, y_b);

      ssm.resize(T * D);
      tmp.resize(T * D);
      for (std::size_t i = 0; i < T * D; ++i) {
        ssm[i] = y_f[i] + y_b[i];
        tmp[i] = ssm[i] * gate[i];
      }
      u.resize(T * Dm);
      gemm(tmp.data(), bp.w_out.data(), u.data(), T, D, Dm);
      for (std::size_t i = 0; i < T * Dm; ++i) x[i] += u[i];

      if (!red.is_site(blk)) continue;
      SiteDecision dec;
      if (opts.replay) {
        dec = opts.replay->at(bi).at(site_index);
      } else {
        Tensor feature;
        switch (red.feature) {
          case Feature::X: feature = to_tensor(x, T, Dm); break;
          case Feature::C: feature = to_tensor(ssm, T, D); break;
          case Feature::B: {
            feature = Tensor({T, 2 * N});
            for (std::size_t t = 0; t < T; ++t)
              for (std::size_t n = 0; n < N; ++n) {
                feature.at(t, n) = static_cast<double>(b_f[t * N + n]);
                feature.at(t, N + n) = static_cast<double>(b_b[t * N + n]);
              }
            break;
          }
          case Feature::Delta: {
            feature = Tensor({T, D});
            for (std::size_t i = 0; i < T * D; ++i)
              feature[i] = 0.5 * (static_cast<double>(delta_f[i]) + static_cast<double>(delta_b[i]));
            break;
          }
        }
        dec = decide_site(feature, red, rng);
      }
      if (!dec.shuffle.empty()) {
        const auto rows = shuffle_layout(dec.shuffle, positions);
        tmp.resize(T * Dm);
        apply_layout<Scalar>(rows, x.data(), Dm, MergeOp::Sum, tmp.data());
        x.swap(tmp);
      }
      const auto rows = reduction_layout(dec.plan, positions, red.mode);
      tmp.resize(rows.size() * Dm);
      apply_layout<Scalar>(rows, x.data(), Dm, red.merge_op, tmp.data());
      x.swap(tmp);
      T = rows.size();
      x.resize(T * Dm);
      positions.clear();
      for (const auto& row : rows) positions.push_back(row.position);
      if (opts.record) (*opts.record)[bi].push_back(std::move(dec));
      ++site_index;
    }

    std::vector<Scalar> pooled(Dm, Scalar(0)), normed(Dm);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < Dm; ++j) pooled[j] += x[t * Dm + j];
    for (auto& v : pooled) v /= static_cast<Scalar>(T);
    rms_norm_rows(pooled.data(), norm_f_.data(), normed.data(), 1, Dm);
    gemm(normed.data(), head_.data(), out.logits.data() + bi * K, 1, Dm, K);
    if (bi == 0) out.trace = std::move(trace);
  }
  return out;
}

template class InferenceModel<float>;
template class InferenceModel<double>;

Tensor predict(const Model& model, const Tensor& images, const ForwardOptions& opts) {
  check_images(model.config, images.rank(), images.dim(1), images.dim(2), images.dim(3));
  const InferenceModel<double> engine(model);
  auto out = engine.forward(images.data(), images.dim(0), opts);
  return Tensor({images.dim(0), model.config.num_classes}, std::move(out.logits));
}

double count_flops(const ModelConfig& cfg) {
  const double Dm = static_cast<double>(cfg.d_model), D = static_cast<double>(cfg.d_inner),
               N = static_cast<double>(cfg.d_state);
  // per token: norm, in+gate projections, two scans (B/C projections, step
  // size, recurrence and readout), gating, out projection, residual
  const double per_token = Dm + 2 * Dm * D + 2 * (2 * D * N + D + 3 * D * N) + D + D * Dm + Dm;
  const auto schedule = simulate_schedule(cfg.num_tokens(), cfg.reduction.sites, cfg.reduction.r, cfg.depth);
  double total = 0.0;
  for (std::size_t t : schedule.entering) total += per_token * static_cast<double>(t);
  return total;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[] = "MEETO1";

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (std::uint64_t{1} << 32)) throw DataError("implausible length in checkpoint");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 6);
  std::string text;
  for (const auto& [k, v] : model_config_entries(model.config)) text += k + "=" + v + "\n";
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : model.parameters()) {
    put_u64(out, p->name.size());
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u64(out, p->value.rank());
    for (std::size_t d : p->value.shape()) put_u64(out, d);
    for (double v : p->value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[6];
  if (!in.read(magic, 6) || std::string(magic, 6) != kMagic) throw DataError("bad checkpoint magic in " + path.string());
  const std::string text = get_bytes(in, get_u64(in));
  ModelConfig cfg;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("bad config line in checkpoint: " + line);
    if (!apply_model_key(cfg, line.substr(0, eq), line.substr(eq + 1))) {
      throw DataError("unknown config key in checkpoint: " + line.substr(0, eq));
    }
  }
  Model model = Model::init(cfg, 0);
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;
  std::set<std::string> loaded;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::string name = get_bytes(in, get_u64(in));
    const std::uint64_t rank = get_u64(in);
    if (rank > 8) throw DataError("implausible tensor rank in checkpoint");
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(get_u64(in));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("unexpected tensor '" + name + "' in checkpoint");
    if (it->second->value.shape() != shape) throw DataError("shape mismatch for tensor '" + name + "'");
    Tensor value(shape);
    for (auto& v : value.data()) v = std::bit_cast<double>(get_u64(in));
    it->second->value = std::move(value);
    it->second->zero_grad();
    if (!loaded.insert(name).second) throw DataError("duplicate tensor '" + name + "' in checkpoint");
  }
  if (loaded.size() != by_name.size()) throw DataError("checkpoint is missing tensors");
  return model;
}

}  // namespace meeto
