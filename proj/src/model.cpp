#include "mtfa/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "mtfa/postproc.hpp"

namespace mtfa {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint i/o assumes a little-endian host");

Tensor fan_in_uniform(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  const real bound = static_cast<real>(std::sqrt(1.0 / static_cast<double>(fan_in)));
  return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

Conv2dLayer make_conv(const std::string& name, std::int64_t c_out, std::int64_t c_in, Rng& rng) {
  Conv2dLayer l;
  l.weight = Parameter(name + ".weight", fan_in_uniform({c_out, c_in, 3, 3}, c_in * 9, rng));
  l.bias = Parameter(name + ".bias", Tensor({c_out}));
  return l;
}

BatchNormLayer make_bn(const std::string& name, std::int64_t c) {
  BatchNormLayer l;
  l.gamma = Parameter(name + ".gamma", Tensor::full({c}, real(1)));
  l.beta = Parameter(name + ".beta", Tensor({c}));
  l.running_mean = Tensor({c});
  l.running_var = Tensor::full({c}, real(1));
  return l;
}

ResidualBlockLayer make_block(const std::string& name, std::int64_t c, Rng& rng) {
  ResidualBlockLayer b;
  b.conv1 = make_conv(name + ".conv1", c, c, rng);
  b.bn1 = make_bn(name + ".bn1", c);
  b.conv2 = make_conv(name + ".conv2", c, c, rng);
  b.bn2 = make_bn(name + ".bn2", c);
  return b;
}

GruDirLayer make_gru_dir(const std::string& name, std::int64_t n_in, std::int64_t units, Rng& rng) {
  GruDirLayer g;
  g.w_ih = Parameter(name + ".w_ih", fan_in_uniform({3 * units, n_in}, n_in, rng));
  g.w_hh = Parameter(name + ".w_hh", fan_in_uniform({3 * units, units}, units, rng));
  g.b_ih = Parameter(name + ".b_ih", Tensor({3 * units}));
  g.b_hh = Parameter(name + ".b_hh", Tensor({3 * units}));
  return g;
}

// T x D mean over channels of a C x T x D tensor.
Tensor channel_mean(const Tensor& x) {
  const std::int64_t c = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor out({t, d});
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const real* p = x.data() + ch * t * d;
    for (std::int64_t i = 0; i < t * d; ++i) out[i] += p[i];
  }
  for (std::int64_t i = 0; i < t * d; ++i) out[i] /= static_cast<real>(c);
  return out;
}

Tensor sigmoid_copy(const Tensor& x) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = real(1) / (real(1) + std::exp(-x[i]));
  return y;
}

// --- forward contexts -------------------------------------------------------

struct EvalCtx {
  using V = Tensor;
  V input(const Tensor& t) { return t; }
  const Tensor& value(const V& v) { return v; }
  V conv(const V& x, Conv2dLayer& l) { return ops::conv2d(x, l.weight.value, l.bias.value); }
  V bn(const V& x, BatchNormLayer& l) {
    return ops::batchnorm2d(x, l.gamma.value, l.beta.value, l.running_mean, l.running_var, /*train=*/false, nullptr,
                            nullptr, nullptr);
  }
  V relu(const V& x) { return ops::relu(x); }
  V sigmoid(const V& x) { return ops::sigmoid(x); }
  V maxpool(const V& x) { return ops::maxpool2d(x); }
  V upsample(const V& x) { return ops::upsample_nearest2(x); }
  V add(const V& a, const V& b) { return ops::add(a, b); }
  V attend(const V& f, const V& m) { return ops::attend(f, m); }
  V collapse(const V& x) { return ops::temporal_collapse(x); }
  V linear(const V& x, LinearLayer& l) { return ops::linear(x, l.weight.value, l.bias.value); }
  V gru_dir(const V& seq, GruDirLayer& g) {
    ops::GruParams p{&g.w_ih.value, &g.w_hh.value, &g.b_ih.value, &g.b_hh.value};
    return ops::gru_forward(seq, p, nullptr);
  }
  V reverse(const V& x) { return ops::reverse_rows(x); }
  V concat(const V& a, const V& b) { return ops::concat_cols(a, b); }
  V dropout(const V& x, double) { return x; }  // eval mode: identity
};

struct TrainCtx {
  Tape& tape;
  Rng& rng;
  using V = Var;
  V input(const Tensor& t) { return tape.leaf(t); }
  const Tensor& value(const V& v) { return tape.val(v); }
  V conv(V x, Conv2dLayer& l) { return tape.conv2d(x, tape.param(l.weight), tape.param(l.bias)); }
  V bn(V x, BatchNormLayer& l) {
    Tensor upd_mean(l.running_mean.shape()), upd_var(l.running_var.shape());
    V out = tape.batchnorm2d(x, tape.param(l.gamma), tape.param(l.beta), l.running_mean, l.running_var,
                             /*train=*/true, &upd_mean, &upd_var);
    l.running_mean = std::move(upd_mean);
    l.running_var = std::move(upd_var);
    return out;
  }
  V relu(V x) { return tape.relu(x); }
  V sigmoid(V x) { return tape.sigmoid(x); }
  V maxpool(V x) { return tape.maxpool2d(x); }
  V upsample(V x) { return tape.upsample_nearest2(x); }
  V add(V a, V b) { return tape.add(a, b); }
  V attend(V f, V m) { return tape.attend(f, m); }
  V collapse(V x) { return tape.temporal_collapse(x); }
  V linear(V x, LinearLayer& l) { return tape.linear(x, tape.param(l.weight), tape.param(l.bias)); }
  V gru_dir(V seq, GruDirLayer& g) {
    return tape.gru(seq, tape.param(g.w_ih), tape.param(g.w_hh), tape.param(g.b_ih), tape.param(g.b_hh));
  }
  V reverse(V x) { return tape.reverse_rows(x); }
  V concat(V a, V b) { return tape.concat_cols(a, b); }
  V dropout(V x, double rate) { return tape.dropout(x, static_cast<real>(rate), /*train=*/true, rng); }
};

}  // namespace

void ModelConfig::validate() const {
  MTFA_REQUIRE(channels >= 1 && gru_units >= 1 && gru_layers >= 1, "config: C, U, layers must be positive");
  MTFA_REQUIRE(n_scales >= 1, "config: n_scales must be at least 1");
  MTFA_REQUIRE(kernel == 3, "config: only 3x3 kernels are supported");
  MTFA_REQUIRE(dropout_rate >= 0.0 && dropout_rate < 1.0, "config: dropout rate must be in [0, 1)");
  MTFA_REQUIRE(threshold > 0.0 && threshold < 1.0, "config: threshold must be in (0, 1)");
  const std::int64_t mult = pad_multiple();
  MTFA_REQUIRE(chunk_frames % mult == 0,
               "config: chunk_frames must be divisible by " + std::to_string(mult));
  MTFA_REQUIRE(mel_bins % mult == 0, "config: mel_bins must be divisible by " + std::to_string(mult));
}

MtfaModel::MtfaModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed, 3);
  const std::int64_t c = cfg_.channels;
  stem_conv_ = make_conv("stem.conv", c, 1, rng);
  stem_bn_ = make_bn("stem.bn", c);
  for (int i = 0; i < 2; ++i) feature_blocks_.push_back(make_block("feature.block" + std::to_string(i), c, rng));
  if (cfg_.use_mask_branch) {
    for (int k = 0; k + 1 < cfg_.n_scales; ++k) {
      enc_blocks_.push_back(make_block("mask.enc" + std::to_string(k), c, rng));
      skip_blocks_.push_back(make_block("mask.skip" + std::to_string(k), c, rng));
      dec_blocks_.push_back(make_block("mask.dec" + std::to_string(k), c, rng));
    }
    bottleneck_ = make_block("mask.bottleneck", c, rng);
    mask_out_ = make_conv("mask.out", c, c, rng);
  }
  for (int l = 0; l < cfg_.gru_layers; ++l) {
    const std::int64_t n_in = l == 0 ? c : 2 * cfg_.gru_units;
    BiGruLayer bi;
    bi.fwd = make_gru_dir("gru" + std::to_string(l) + ".fwd", n_in, cfg_.gru_units, rng);
    bi.bwd = make_gru_dir("gru" + std::to_string(l) + ".bwd", n_in, cfg_.gru_units, rng);
    gru_layers_.push_back(std::move(bi));
  }
  const std::int64_t two_u = 2 * cfg_.gru_units;
  fc1_.weight = Parameter("fc1.weight", fan_in_uniform({cfg_.gru_units, two_u}, two_u, rng));
  fc1_.bias = Parameter("fc1.bias", Tensor({cfg_.gru_units}));
  fc2_.weight = Parameter("fc2.weight", fan_in_uniform({1, cfg_.gru_units}, cfg_.gru_units, rng));
  fc2_.bias = Parameter("fc2.bias", Tensor({1}));
}

std::vector<Parameter*> MtfaModel::parameters() {
  std::vector<Parameter*> out;
  const auto add_conv = [&](Conv2dLayer& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  const auto add_bn = [&](BatchNormLayer& l) {
    out.push_back(&l.gamma);
    out.push_back(&l.beta);
  };
  const auto add_block = [&](ResidualBlockLayer& b) {
    add_conv(b.conv1);
    add_bn(b.bn1);
    add_conv(b.conv2);
    add_bn(b.bn2);
  };
  add_conv(stem_conv_);
  add_bn(stem_bn_);
  for (auto& b : feature_blocks_) add_block(b);
  if (cfg_.use_mask_branch) {
    for (auto& b : enc_blocks_) add_block(b);
    for (auto& b : skip_blocks_) add_block(b);
    add_block(bottleneck_);
    for (auto& b : dec_blocks_) add_block(b);
    add_conv(mask_out_);
  }
  for (auto& g : gru_layers_) {
    for (GruDirLayer* d : {&g.fwd, &g.bwd}) {
      out.push_back(&d->w_ih);
      out.push_back(&d->w_hh);
      out.push_back(&d->b_ih);
      out.push_back(&d->b_hh);
    }
  }
  out.push_back(&fc1_.weight);
  out.push_back(&fc1_.bias);
  out.push_back(&fc2_.weight);
  out.push_back(&fc2_.bias);
  return out;
}

void MtfaModel::for_each_state(const std::function<void(const std::string&, Tensor&)>& fn) {
  for (Parameter* p : parameters()) fn(p->name, p->value);
  const auto bn_state = [&](const std::string& name, BatchNormLayer& l) {
    fn(name + ".running_mean", l.running_mean);
    fn(name + ".running_var", l.running_var);
  };
  const auto block_state = [&](const std::string& name, ResidualBlockLayer& b) {
    bn_state(name + ".bn1", b.bn1);
    bn_state(name + ".bn2", b.bn2);
  };
  bn_state("stem.bn", stem_bn_);
  for (std::size_t i = 0; i < feature_blocks_.size(); ++i)
    block_state("feature.block" + std::to_string(i), feature_blocks_[i]);
  if (cfg_.use_mask_branch) {
    for (std::size_t k = 0; k < enc_blocks_.size(); ++k) {
      block_state("mask.enc" + std::to_string(k), enc_blocks_[k]);
      block_state("mask.skip" + std::to_string(k), skip_blocks_[k]);
      block_state("mask.dec" + std::to_string(k), dec_blocks_[k]);
    }
    block_state("mask.bottleneck", bottleneck_);
  }
}

std::int64_t MtfaModel::parameter_count() {
  std::int64_t n = 0;
  for (Parameter* p : parameters()) n += p->value.numel();
  return n;
}

template <class Ctx>
typename Ctx::V MtfaModel::residual_block(Ctx& cx, typename Ctx::V x, ResidualBlockLayer& blk) {
  auto h = cx.relu(cx.bn(cx.conv(x, blk.conv1), blk.bn1));
  h = cx.bn(cx.conv(h, blk.conv2), blk.bn2);
  return cx.relu(cx.add(x, h));
}

template <class Ctx>
typename Ctx::V MtfaModel::mask_branch(Ctx& cx, typename Ctx::V x, AttentionTrace* trace) {
  using V = typename Ctx::V;
  std::vector<V> skips;
  V cur = x;
  for (std::size_t k = 0; k + 1 < static_cast<std::size_t>(cfg_.n_scales); ++k) {
    cur = residual_block(cx, cur, enc_blocks_[k]);
    skips.push_back(residual_block(cx, cur, skip_blocks_[k]));
    cur = cx.maxpool(cur);
  }
  cur = residual_block(cx, cur, bottleneck_);
  if (trace) trace->scale_masks.resize(static_cast<std::size_t>(cfg_.n_scales));
  if (trace) trace->scale_masks[static_cast<std::size_t>(cfg_.n_scales - 1)] = sigmoid_copy(channel_mean(cx.value(cur)));
  for (int k = cfg_.n_scales - 2; k >= 0; --k) {
    cur = cx.upsample(cur);
    cur = cx.add(cur, skips[static_cast<std::size_t>(k)]);
    cur = residual_block(cx, cur, dec_blocks_[static_cast<std::size_t>(k)]);
    if (trace && k > 0) trace->scale_masks[static_cast<std::size_t>(k)] = sigmoid_copy(channel_mean(cx.value(cur)));
  }
  V mask = cx.sigmoid(cx.conv(cur, mask_out_));
  if (trace) trace->scale_masks[0] = channel_mean(cx.value(mask));
  return mask;
}

template <class Ctx>
typename Ctx::V MtfaModel::forward_impl(Ctx& cx, const Tensor& input, AttentionTrace* trace) {
  MTFA_REQUIRE(input.rank() == 3 && input.dim(0) == 1, "forward: input must be 1 x T x D");
  const std::int64_t mult = cfg_.pad_multiple();
  MTFA_REQUIRE(input.dim(1) % mult == 0 && input.dim(2) % mult == 0,
               "forward: T and D must be divisible by " + std::to_string(mult) + ", got " + input.shape_str());
  MTFA_REQUIRE(input.dim(2) == cfg_.mel_bins, "forward: expected " + std::to_string(cfg_.mel_bins) + " mel bins");

  using V = typename Ctx::V;
  V x = cx.input(input);
  V stem = cx.relu(cx.bn(cx.conv(x, stem_conv_), stem_bn_));

  V feat = stem;
  for (auto& blk : feature_blocks_) feat = residual_block(cx, feat, blk);

  V attended;
  if (cfg_.use_mask_branch) {
    V mask = mask_branch(cx, stem, trace);
    attended = cx.attend(feat, mask);
    if (trace) trace->mask = cx.value(mask);
  } else {
    attended = feat;
    if (trace) trace->mask = Tensor();
  }
  if (trace) {
    trace->feature = cx.value(feat);
    trace->attended = cx.value(attended);
  }

  V seq = cx.collapse(attended);
  for (std::size_t l = 0; l < gru_layers_.size(); ++l) {
    if (l > 0) seq = cx.dropout(seq, cfg_.dropout_rate);
    V fwd = cx.gru_dir(seq, gru_layers_[l].fwd);
    V bwd = cx.reverse(cx.gru_dir(cx.reverse(seq), gru_layers_[l].bwd));
    seq = cx.concat(fwd, bwd);
  }

  V h = cx.relu(cx.linear(seq, fc1_));
  h = cx.dropout(h, cfg_.dropout_rate);
  return cx.sigmoid(cx.linear(h, fc2_));  // T x 1
}

std::vector<real> MtfaModel::forward_eval(const Tensor& chunk, AttentionTrace* trace) {
  MTFA_REQUIRE(chunk.rank() == 2, "forward_eval: chunk must be T x D");
  Tensor input({1, chunk.dim(0), chunk.dim(1)}, chunk.values());
  EvalCtx cx;
  Tensor probs = forward_impl(cx, input, trace);
  return probs.values();
}

std::vector<real> MtfaModel::predict(const Spectrogram& spec, AttentionTrace* trace) {
  auto [padded, original_t] = postproc::pad_time_axis(spec, cfg_.pad_multiple());
  std::vector<real> probs = forward_eval(padded.frames, trace);
  probs.resize(static_cast<std::size_t>(original_t));
  return probs;
}

Var MtfaModel::forward_train(Tape& tape, const Tensor& chunk, Rng& dropout_rng) {
  MTFA_REQUIRE(chunk.rank() == 2, "forward_train: chunk must be T x D");
  Tensor input({1, chunk.dim(0), chunk.dim(1)}, chunk.values());
  TrainCtx cx{tape, dropout_rng};
  return forward_impl(cx, input, nullptr);
}

std::vector<Tensor> MtfaModel::snapshot_state() {
  std::vector<Tensor> out;
  for_each_state([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

void MtfaModel::restore_state(const std::vector<Tensor>& state) {
  std::size_t i = 0;
  for_each_state([&](const std::string&, Tensor& t) {
    MTFA_REQUIRE(i < state.size() && state[i].same_shape(t), "restore_state: snapshot mismatch");
    t = state[i++];
  });
  MTFA_REQUIRE(i == state.size(), "restore_state: snapshot length mismatch");
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'T', 'F', 'A', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError(path + ": truncated checkpoint");
  return v;
}
double read_f64(std::istream& in, const std::string& path) {
  double v;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw IoError(path + ": truncated checkpoint");
  return v;
}
std::string read_string(std::istream& in, const std::string& path) {
  const std::uint32_t n = read_u32(in, path);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw IoError(path + ": truncated checkpoint");
  return s;
}

}  // namespace

void MtfaModel::save_checkpoint(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(kCheckpointMagic, 8);
  write_u32(out, 1);  // version
  write_u32(out, static_cast<std::uint32_t>(cfg_.channels));
  write_u32(out, static_cast<std::uint32_t>(cfg_.gru_units));
  write_u32(out, static_cast<std::uint32_t>(cfg_.gru_layers));
  write_u32(out, static_cast<std::uint32_t>(cfg_.mel_bins));
  write_u32(out, static_cast<std::uint32_t>(cfg_.chunk_frames));
  write_u32(out, static_cast<std::uint32_t>(cfg_.chunk_shift));
  write_u32(out, static_cast<std::uint32_t>(cfg_.n_scales));
  write_u32(out, static_cast<std::uint32_t>(cfg_.kernel));
  write_u32(out, cfg_.use_mask_branch ? 1 : 0);
  write_f64(out, cfg_.dropout_rate);
  write_f64(out, cfg_.threshold);
  write_string(out, cfg_.class_name);

  std::uint32_t count = 0;
  for_each_state([&](const std::string&, Tensor&) { ++count; });
  write_u32(out, count);
  for_each_state([&](const std::string& name, Tensor& t) {
    write_string(out, name);
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::int64_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const float v = static_cast<float>(t[i]);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  });
  if (!out) throw IoError(path + ": write failed");
}

MtfaModel MtfaModel::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError(path + ": not a checkpoint file");
  const std::uint32_t version = read_u32(in, path);
  if (version != 1) throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  cfg.channels = static_cast<int>(read_u32(in, path));
  cfg.gru_units = static_cast<int>(read_u32(in, path));
  cfg.gru_layers = static_cast<int>(read_u32(in, path));
  cfg.mel_bins = static_cast<int>(read_u32(in, path));
  cfg.chunk_frames = static_cast<int>(read_u32(in, path));
  cfg.chunk_shift = static_cast<int>(read_u32(in, path));
  cfg.n_scales = static_cast<int>(read_u32(in, path));
  cfg.kernel = static_cast<int>(read_u32(in, path));
  cfg.use_mask_branch = read_u32(in, path) != 0;
  cfg.dropout_rate = read_f64(in, path);
  cfg.threshold = read_f64(in, path);
  cfg.class_name = read_string(in, path);

  std::map<std::string, Tensor> records;
  const std::uint32_t count = read_u32(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in, path);
    const std::uint32_t rank = read_u32(in, path);
    std::vector<std::int64_t> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::int64_t>(read_u32(in, path)));
    Tensor t(shape);
    for (std::int64_t k = 0; k < t.numel(); ++k) {
      float v;
      if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError(path + ": truncated record " + name);
      t[k] = static_cast<real>(v);
    }
    records.emplace(name, std::move(t));
  }

  MtfaModel model(cfg, /*seed=*/0);
  model.for_each_state([&](const std::string& name, Tensor& t) {
    auto it = records.find(name);
    if (it == records.end()) throw CheckpointError(path + ": missing record '" + name + "'");
    if (!it->second.same_shape(t))
      throw CheckpointError(path + ": record '" + name + "' has shape " + it->second.shape_str() +
                            " but the architecture requires " + t.shape_str());
    t = std::move(it->second);
    records.erase(it);
  });
  if (!records.empty()) throw CheckpointError(path + ": unexpected record '" + records.begin()->first + "'");
  return model;
}

}  // namespace mtfa
