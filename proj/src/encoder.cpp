#include "bhfa/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "bhfa/errors.hpp"
#include "bhfa/rng.hpp"

namespace bhfa {

// ----------------------------------------------------------------------- Arch

int Arch::reduction_for(int block) const {
  if (!reductions.empty()) return reductions[static_cast<std::size_t>(block)];
  return reduction_ratio(widths[static_cast<std::size_t>(block)]);
}

void Arch::validate() const {
  require(in_channels >= 1, "Arch: in_channels must be >= 1");
  require(latent_dim >= 1, "Arch: latent_dim must be >= 1");
  require(!widths.empty(), "Arch: at least one conv block required");
  require(reductions.empty() || reductions.size() == widths.size(),
          "Arch: reductions must be empty or match the block count");
  require(side >= 1 && side % (1 << blocks()) == 0,
          "Arch: side must be divisible by 2^blocks");
  for (int b = 0; b < blocks(); ++b) {
    const int w = widths[static_cast<std::size_t>(b)];
    const int r = reduction_for(b);
    require(w >= 1, "Arch: block width must be >= 1");
    require(r >= 1 && w % r == 0, "Arch: reduction ratio must divide the block width");
  }
}

bool Arch::operator==(const Arch& other) const {
  if (in_channels != other.in_channels || side != other.side || latent_dim != other.latent_dim ||
      widths != other.widths)
    return false;
  for (int b = 0; b < blocks(); ++b)
    if (reduction_for(b) != other.reduction_for(b)) return false;
  return true;
}

// --------------------------------------------------------------- EncoderModel

EncoderModel::EncoderModel(Arch arch) : arch_(std::move(arch)) {
  arch_.validate();
  const int b = arch_.blocks();
  const int d = arch_.latent_dim;
  const int last = arch_.widths[static_cast<std::size_t>(b - 1)];
  const int m = arch_.min_side();

  auto push = [&](std::string name, std::vector<int> shape) {
    names_.push_back(std::move(name));
    params_.emplace_back(std::move(shape));
  };

  int prev = arch_.in_channels;
  for (int i = 0; i < b; ++i) {
    const int width = arch_.widths[static_cast<std::size_t>(i)];
    const int r = arch_.reduction_for(i);
    const std::string tag = "block" + std::to_string(i);
    push(tag + ".conv_w", {width, prev, 3, 3});
    push(tag + ".conv_b", {width});
    push(tag + ".att_w0", {width / r, width});
    push(tag + ".att_w1", {width, width / r});
    push(tag + ".att_sp", {1, 2, 7, 7});
    prev = width;
  }
  push("head.mu_w", {d, last});
  push("head.mu_b", {d});
  push("head.ls_w", {d, last});
  push("head.ls_b", {d});
  push("dec.lin_w", {last * m * m, d});
  push("dec.lin_b", {last * m * m});
  for (int s = 0; s < b; ++s) {
    const int in_c = arch_.widths[static_cast<std::size_t>(b - 1 - s)];
    const int out_c = s == b - 1 ? arch_.in_channels : arch_.widths[static_cast<std::size_t>(b - 2 - s)];
    const std::string tag = "dec.stage" + std::to_string(s);
    push(tag + ".conv_w", {out_c, in_c, 3, 3});
    push(tag + ".conv_b", {out_c});
  }
}

void EncoderModel::init_params(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    const std::string& name = names_[i];
    const bool is_bias = p.ndim() == 1;
    if (is_bias) {
      p.fill(name == "head.ls_b" ? -1.0 : 0.0);
      continue;
    }
    // fan_in: input features for affine maps, C_in*kH*kW for convolutions
    const int fan_in = p.ndim() == 2 ? p.dim(1) : p.dim(1) * p.dim(2) * p.dim(3);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (std::size_t j = 0; j < p.numel(); ++j) p[j] = rng.uniform(-bound, bound);
  }
}

std::size_t EncoderModel::param_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.numel();
  return n;
}

std::vector<ad::Var> EncoderModel::make_vars(ad::Tape& t, bool requires_grad) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& p : params_) vars.push_back(t.leaf(p, requires_grad));
  return vars;
}

std::pair<ad::Var, ad::Var> EncoderModel::encode_vars(ad::Tape& t, const std::vector<ad::Var>& p,
                                                      ad::Var x) const {
  const Tensor& xv = t.val(x);
  require(xv.ndim() == 4 && xv.dim(1) == arch_.in_channels && xv.dim(2) == arch_.side &&
              xv.dim(3) == arch_.side,
          "encode: input must be (N," + std::to_string(arch_.in_channels) + "," +
              std::to_string(arch_.side) + "," + std::to_string(arch_.side) + "), got " +
              xv.shape_str());
  require(p.size() == params_.size(), "encode: parameter var list mismatch");

  ad::Var h = x;
  for (int b = 0; b < arch_.blocks(); ++b) {
    const std::size_t base = block_base(b);
    h = t.conv2d(h, p[base], p[base + 1], 1);
    h = t.relu(h);
    h = t.maxpool2(h);
    // channel gate: shared bias-free MLP over per-channel avg and max pools
    ad::Var a = t.pool_hw_avg(h);
    ad::Var mx = t.pool_hw_max(h);
    a = t.matmul_wt(t.matmul_wt(a, p[base + 2]), p[base + 3]);
    mx = t.matmul_wt(t.matmul_wt(mx, p[base + 2]), p[base + 3]);
    h = t.mul_channels(h, t.sigmoid(t.add(a, mx)));
    // spatial gate from the channel-scaled map
    ad::Var stats = t.spatial_stats(h);
    ad::Var mask = t.sigmoid(t.conv2d(stats, p[base + 4], ad::Var{}, 3));
    h = t.mul_spatial(h, mask);
  }
  ad::Var g = t.pool_hw_avg(h);
  const std::size_t hb = head_base();
  ad::Var mu = t.add_rowvec(t.matmul_wt(g, p[hb]), p[hb + 1]);
  ad::Var ls = t.add_rowvec(t.matmul_wt(g, p[hb + 2]), p[hb + 3]);
  ls = t.clamp(ls, kLogStdMin, kLogStdMax);
  return {mu, ls};
}

ad::Var EncoderModel::decode_vars(ad::Tape& t, const std::vector<ad::Var>& p, ad::Var z) const {
  const Tensor& zv = t.val(z);
  require(zv.ndim() == 2 && zv.dim(1) == arch_.latent_dim,
          "decode: input must be (N," + std::to_string(arch_.latent_dim) + "), got " +
              zv.shape_str());
  require(p.size() == params_.size(), "decode: parameter var list mismatch");

  const int n = zv.dim(0);
  const int b = arch_.blocks();
  const int last = arch_.widths[static_cast<std::size_t>(b - 1)];
  const int m = arch_.min_side();
  const std::size_t db = dec_base();

  ad::Var h = t.relu(t.add_rowvec(t.matmul_wt(z, p[db]), p[db + 1]));
  h = t.reshape(h, {n, last, m, m});
  for (int s = 0; s < b; ++s) {
    h = t.upsample2(h);
    h = t.conv2d(h, p[db + 2 + 2 * static_cast<std::size_t>(s)],
                 p[db + 3 + 2 * static_cast<std::size_t>(s)], 1);
    h = (s == b - 1) ? t.sigmoid(h) : t.relu(h);
  }
  return h;
}

std::pair<Tensor, Tensor> EncoderModel::encode_batch(const Tensor& x) const {
  ad::Tape t;
  auto vars = make_vars(t, false);
  auto [mu, ls] = encode_vars(t, vars, t.leaf(x, false));
  return {t.val(mu), t.val(ls)};
}

DiagGaussian EncoderModel::encode(const Tensor& image) const {
  require(image.ndim() == 3, "encode: image must be (C,H,W)");
  Tensor batch = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  auto [mu, ls] = encode_batch(batch);
  return DiagGaussian(mu.vec(), ls.vec());
}

Tensor EncoderModel::decode_batch(const Tensor& z) const {
  ad::Tape t;
  auto vars = make_vars(t, false);
  return t.val(decode_vars(t, vars, t.leaf(z, false)));
}

Tensor EncoderModel::decode(const std::vector<double>& z) const {
  Tensor batch({1, static_cast<int>(z.size())}, z);
  Tensor out = decode_batch(batch);
  return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
}

AttentionParams EncoderModel::attention_params(int block) const {
  require(block >= 0 && block < arch_.blocks(), "attention_params: block index out of range");
  const std::size_t base = block_base(block);
  AttentionParams out;
  out.mlp_w0 = params_[base + 2];
  out.mlp_w1 = params_[base + 3];
  out.spatial_kernel = params_[base + 4];
  out.r = arch_.reduction_for(block);
  return out;
}

// ----------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[5] = {'B', 'H', 'F', 'A', '1'};
constexpr char kOptMagic[5] = {'A', 'D', 'A', 'M', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void write_f64(std::ostream& os, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_u64(os, std::bit_cast<std::uint64_t>(data[i]));
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("truncated checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
  const std::uint64_t lo = read_u32(is, path);
  const std::uint64_t hi = read_u32(is, path);
  return lo | hi << 32;
}

void read_f64(std::istream& is, double* data, std::size_t n, const std::string& path) {
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(read_u64(is, path));
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderModel& model,
                     const OptimizerState* opt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  const Arch& a = model.arch();
  os.write(kMagic, 5);
  write_u32(os, static_cast<std::uint32_t>(a.in_channels));
  write_u32(os, static_cast<std::uint32_t>(a.side));
  write_u32(os, static_cast<std::uint32_t>(a.latent_dim));
  write_u32(os, static_cast<std::uint32_t>(a.blocks()));
  for (int b = 0; b < a.blocks(); ++b) {
    write_u32(os, static_cast<std::uint32_t>(a.widths[static_cast<std::size_t>(b)]));
    write_u32(os, static_cast<std::uint32_t>(a.reduction_for(b)));
  }
  const auto& params = model.parameters();
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Tensor& p : params) {
    write_u32(os, static_cast<std::uint32_t>(p.ndim()));
    for (int i = 0; i < p.ndim(); ++i) write_u32(os, static_cast<std::uint32_t>(p.dim(i)));
    write_f64(os, p.data(), p.numel());
  }
  if (opt) {
    require(opt->m.size() == params.size() && opt->v.size() == params.size(),
            "save_checkpoint: optimizer slots must match the parameter list");
    os.write(kOptMagic, 5);
    write_u64(os, opt->step);
    for (const Tensor& m : opt->m) write_f64(os, m.data(), m.numel());
    for (const Tensor& v : opt->v) write_f64(os, v.data(), v.numel());
  }
  if (!os) throw IoError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || !std::equal(magic, magic + 5, kMagic))
    throw IoError("not a model checkpoint (bad magic): " + path);

  Arch a;
  a.in_channels = static_cast<int>(read_u32(is, path));
  a.side = static_cast<int>(read_u32(is, path));
  a.latent_dim = static_cast<int>(read_u32(is, path));
  const int blocks = static_cast<int>(read_u32(is, path));
  if (blocks < 1 || blocks > 16)
    throw IoError("implausible block count in checkpoint header: " + path);
  a.widths.resize(static_cast<std::size_t>(blocks));
  a.reductions.resize(static_cast<std::size_t>(blocks));
  for (int b = 0; b < blocks; ++b) {
    a.widths[static_cast<std::size_t>(b)] = static_cast<int>(read_u32(is, path));
    a.reductions[static_cast<std::size_t>(b)] = static_cast<int>(read_u32(is, path));
  }

  LoadedCheckpoint out{EncoderModel(a), std::nullopt};
  auto& params = out.model.parameters();
  const std::uint32_t n_params = read_u32(is, path);
  if (n_params != params.size())
    throw IoError("corrupt checkpoint (parameter count mismatch) in " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const std::uint32_t ndim = read_u32(is, path);
    if (static_cast<int>(ndim) != p.ndim())
      throw IoError("corrupt checkpoint (parameter rank mismatch) at " + out.model.param_name(i));
    for (int j = 0; j < p.ndim(); ++j) {
      if (read_u32(is, path) != static_cast<std::uint32_t>(p.dim(j)))
        throw IoError("corrupt checkpoint (parameter shape mismatch) at " + out.model.param_name(i));
    }
    read_f64(is, p.data(), p.numel(), path);
  }

  // optional optimizer trailer
  char opt_magic[5];
  is.read(opt_magic, 5);
  if (is.gcount() == 0) return out;
  if (is.gcount() != 5 || !std::equal(opt_magic, opt_magic + 5, kOptMagic))
    throw IoError("trailing bytes after parameters are not an optimizer trailer: " + path);
  OptimizerState opt;
  opt.step = read_u64(is, path);
  opt.m.reserve(params.size());
  opt.v.reserve(params.size());
  for (const Tensor& p : params) {
    Tensor m(p.shape());
    read_f64(is, m.data(), m.numel(), path);
    opt.m.push_back(std::move(m));
  }
  for (const Tensor& p : params) {
    Tensor v(p.shape());
    read_f64(is, v.data(), v.numel(), path);
    opt.v.push_back(std::move(v));
  }
  is.peek();
  if (!is.eof()) throw IoError("trailing bytes after optimizer state: " + path);
  out.opt = std::move(opt);
  return out;
}

}  // namespace bhfa
