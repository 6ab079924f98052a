#include "changediff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "changediff/errors.hpp"
#include "changediff/rng.hpp"
#include "changediff/text_encoder.hpp"

namespace changediff {

void DenoiserConfig::validate() const {
  if (latent_channels < 1 || latent_h < 1 || latent_w < 1)
    fail(ErrorKind::Config, "latent geometry must be positive");
  if (base_channels < 1) fail(ErrorKind::Config, "base_channels must be positive");
  if (channel_mult.empty()) fail(ErrorKind::Config, "channel_mult must be non-empty");
  for (int m : channel_mult)
    if (m < 1) fail(ErrorKind::Config, "channel multipliers must be positive");
  int down = 1 << (levels() - 1);
  if (latent_h % down || latent_w % down)
    fail(ErrorKind::Config, "latent size must be divisible by 2^(levels-1)");
  for (int res : attention_resolutions) {
    bool found = false;
    for (int l = 0; l < levels(); ++l) found = found || resolution_at(l) == res;
    if (!found)
      fail(ErrorKind::Config, "attention resolution " + std::to_string(res) +
                                  " is not produced by the encoder");
    for (int l = 0; l < levels(); ++l)
      if (resolution_at(l) == res && channels_at(l) % heads != 0)
        fail(ErrorKind::Config, "channels at attention resolution " +
                                    std::to_string(res) +
                                    " not divisible by head count");
  }
  if (heads < 1 || text_dim < 1 || context_len < 1 || time_dim < 2 || norm_groups < 1)
    fail(ErrorKind::Config, "model dimensions must be positive");
}

Tensor colormap_to_latent(const ColorMap& map) {
  Tensor z({3, map.height, map.width});
  size_t hw = map.pixels();
  for (size_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c)
      z.data[c * hw + i] = map.rgb[i * 3 + c] / 127.5 - 1.0;
  return z;
}

ColorMap latent_to_colormap(const Tensor& latent) {
  if (latent.shape.size() != 3 || latent.shape[0] != 3)
    fail(ErrorKind::Shape, "latent must be (3,H,W), got " + latent.shape_str());
  ColorMap map(latent.shape[1], latent.shape[2]);
  size_t hw = map.pixels();
  for (size_t i = 0; i < hw; ++i)
    for (int c = 0; c < 3; ++c) {
      double v = std::clamp(latent.data[c * hw + i], -1.0, 1.0);
      map.rgb[i * 3 + c] = static_cast<uint8_t>(std::lround((v + 1.0) * 127.5));
    }
  return map;
}

namespace detail {

using ad::Param;
using ad::Tape;
using ad::Var;

namespace {

int groups_for(int channels, int preferred) {
  for (int g = std::min(preferred, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

Tensor randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = stddev * rng.normal();
  return t;
}

Tensor ones(std::vector<int> shape) {
  Tensor t(std::move(shape));
  std::fill(t.data.begin(), t.data.end(), 1.0);
  return t;
}

}  // namespace

struct Conv3 {
  Param w, b;
  Conv3() = default;
  Conv3(const std::string& name, int ci, int co, Rng& rng, bool zero = false)
      : w(name + ".w", zero ? Tensor({co, ci, 3, 3})
                            : randn({co, ci, 3, 3}, rng, std::sqrt(2.0 / (ci * 9)))),
        b(name + ".b", Tensor({co})) {}
  Var fwd(Tape& t, Var x) { return ad::conv3x3(t, x, t.use(w), t.use(b)); }
};

struct Conv1 {
  Param w, b;
  Conv1() = default;
  Conv1(const std::string& name, int ci, int co, Rng& rng, bool zero = false)
      : w(name + ".w",
          zero ? Tensor({co, ci}) : randn({co, ci}, rng, std::sqrt(1.0 / ci))),
        b(name + ".b", Tensor({co})) {}
  Var fwd(Tape& t, Var x) { return ad::conv1x1(t, x, t.use(w), t.use(b)); }
};

struct Lin {
  Param w, b;
  Lin() = default;
  Lin(const std::string& name, int di, int dout, Rng& rng)
      : w(name + ".w", randn({di, dout}, rng, std::sqrt(1.0 / di))),
        b(name + ".b", Tensor({dout})) {}
  Var fwd(Tape& t, Var x) { return ad::linear(t, x, t.use(w), t.use(b)); }
};

struct Norm {
  Param g, b;
  int groups = 1;
  Norm() = default;
  Norm(const std::string& name, int channels, int preferred_groups)
      : g(name + ".g", ones({channels})),
        b(name + ".b", Tensor({channels})),
        groups(groups_for(channels, preferred_groups)) {}
  Var fwd(Tape& t, Var x) { return ad::group_norm(t, x, t.use(g), t.use(b), groups); }
};

struct ResBlock {
  Norm n1, n2;
  Conv3 c1, c2;
  Lin temb_proj;
  Conv1 skip;  // present only when ci != co
  bool has_skip = false;
  int co = 0;

  ResBlock() = default;
  ResBlock(const std::string& name, int ci, int co_, int time_dim, int ngroups,
           Rng& rng)
      : n1(name + ".n1", ci, ngroups),
        n2(name + ".n2", co_, ngroups),
        c1(name + ".c1", ci, co_, rng),
        c2(name + ".c2", co_, co_, rng, /*zero=*/true),
        temb_proj(name + ".temb", time_dim, co_, rng),
        co(co_) {
    if (ci != co_) {
      skip = Conv1(name + ".skip", ci, co_, rng);
      has_skip = true;
    }
  }

  Var fwd(Tape& t, Var x, Var temb_row) {
    Var h = c1.fwd(t, ad::silu(t, n1.fwd(t, x)));
    Var tb = ad::reshape(t, temb_proj.fwd(t, ad::silu(t, temb_row)), {co});
    h = ad::add_bias_ch(t, h, tb);
    h = c2.fwd(t, ad::silu(t, n2.fwd(t, h)));
    Var base = has_skip ? skip.fwd(t, x) : x;
    return ad::add(t, base, h);
  }

  void collect(std::vector<Param*>& out) {
    out.insert(out.end(), {&n1.g, &n1.b, &c1.w, &c1.b, &temb_proj.w, &temb_proj.b,
                           &n2.g, &n2.b, &c2.w, &c2.b});
    if (has_skip) out.insert(out.end(), {&skip.w, &skip.b});
  }
};

struct CrossAttn {
  Norm norm;
  Lin q, k, v, o;
  int heads = 1;
  int channels = 0;

  CrossAttn() = default;
  CrossAttn(const std::string& name, int channels_, int text_dim, int heads_,
            int ngroups, Rng& rng)
      : norm(name + ".norm", channels_, ngroups),
        q(name + ".q", channels_, channels_, rng),
        k(name + ".k", text_dim, channels_, rng),
        v(name + ".v", text_dim, channels_, rng),
        o(name + ".o", channels_, channels_, rng),
        heads(heads_),
        channels(channels_) {}

  // Returns the residual-updated feature map and the head-averaged map.
  std::pair<Var, Var> fwd(Tape& t, Var x, Var text) {
    int c = x->value.shape[0], h = x->value.shape[1], w = x->value.shape[2];
    int hw = h * w;
    Var xn = norm.fwd(t, x);
    Var rows = ad::transpose(t, ad::reshape(t, xn, {c, hw}));  // [hw, c]
    Var Q = q.fwd(t, rows);
    Var K = k.fwd(t, text);
    Var V = v.fwd(t, text);
    int dh = channels / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    Var attn_sum = nullptr;
    for (int head = 0; head < heads; ++head) {
      Var Qh = ad::slice_cols(t, Q, head * dh, (head + 1) * dh);
      Var Kh = ad::slice_cols(t, K, head * dh, (head + 1) * dh);
      Var Vh = ad::slice_cols(t, V, head * dh, (head + 1) * dh);
      Var A = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, Qh, Kh), scale));
      attn_sum = attn_sum ? ad::add(t, attn_sum, A) : A;
      outs.push_back(ad::matmul(t, A, Vh));
    }
    Var merged = o.fwd(t, heads == 1 ? outs[0] : ad::concat_cols(t, outs));
    Var y = ad::add(t, x, ad::reshape(t, ad::transpose(t, merged), {c, h, w}));
    Var attn_mean = heads == 1 ? attn_sum : ad::scale(t, attn_sum, 1.0 / heads);
    return {y, attn_mean};
  }

  void collect(std::vector<Param*>& out) {
    out.insert(out.end(), {&norm.g, &norm.b, &q.w, &q.b, &k.w, &k.b, &v.w, &v.b,
                           &o.w, &o.b});
  }
};

struct DenoiserImpl {
  DenoiserConfig cfg;
  Conv3 conv_in;
  Lin time1, time2;
  std::vector<ResBlock> enc;
  std::vector<bool> enc_has_attn;
  std::vector<CrossAttn> enc_attn;
  ResBlock mid;
  std::vector<ResBlock> dec;  // index by level, levels-2 .. 0 used
  std::vector<bool> dec_has_attn;
  std::vector<CrossAttn> dec_attn;
  Norm out_norm;
  Conv3 out_conv;
  // side network (layout conditioning)
  Conv3 side_conv_in;
  std::vector<ResBlock> side_enc;
  std::vector<Conv1> side_proj;  // zero-initialized injections, one per level

  explicit DenoiserImpl(const DenoiserConfig& config, uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x64656e6f));  // "deno"
    int in_ch = cfg.latent_channels + (cfg.coord_features ? 2 : 0);
    conv_in = Conv3("conv_in", in_ch, cfg.channels_at(0), rng);
    time1 = Lin("time.l1", cfg.time_dim, cfg.time_dim, rng);
    time2 = Lin("time.l2", cfg.time_dim, cfg.time_dim, rng);

    int L = cfg.levels();
    enc.resize(L);
    enc_attn.resize(L);
    enc_has_attn.assign(L, false);
    for (int i = 0; i < L; ++i) {
      int ci = (i == 0) ? cfg.channels_at(0) : cfg.channels_at(i - 1);
      enc[i] = ResBlock("enc" + std::to_string(i), ci, cfg.channels_at(i),
                        cfg.time_dim, cfg.norm_groups, rng);
      if (attn_at(i)) {
        enc_attn[i] = CrossAttn("enc" + std::to_string(i) + ".attn",
                                cfg.channels_at(i), cfg.text_dim, cfg.heads,
                                cfg.norm_groups, rng);
        enc_has_attn[i] = true;
      }
    }
    mid = ResBlock("mid", cfg.channels_at(L - 1), cfg.channels_at(L - 1),
                   cfg.time_dim, cfg.norm_groups, rng);
    dec.resize(L);
    dec_attn.resize(L);
    dec_has_attn.assign(L, false);
    for (int i = L - 2; i >= 0; --i) {
      int ci = cfg.channels_at(i + 1) + cfg.channels_at(i);
      dec[i] = ResBlock("dec" + std::to_string(i), ci, cfg.channels_at(i),
                        cfg.time_dim, cfg.norm_groups, rng);
      if (attn_at(i)) {
        dec_attn[i] = CrossAttn("dec" + std::to_string(i) + ".attn",
                                cfg.channels_at(i), cfg.text_dim, cfg.heads,
                                cfg.norm_groups, rng);
        dec_has_attn[i] = true;
      }
    }
    out_norm = Norm("out.norm", cfg.channels_at(0), cfg.norm_groups);
    out_conv = Conv3("out.conv", cfg.channels_at(0), cfg.latent_channels, rng,
                     /*zero=*/true);

    if (cfg.side_network) {
      side_conv_in = Conv3("side.conv_in", in_ch, cfg.channels_at(0), rng);
      side_enc.resize(L);
      side_proj.resize(L);
      for (int i = 0; i < L; ++i) {
        int ci = (i == 0) ? cfg.channels_at(0) : cfg.channels_at(i - 1);
        side_enc[i] = ResBlock("side.enc" + std::to_string(i), ci,
                               cfg.channels_at(i), cfg.time_dim, cfg.norm_groups, rng);
        side_proj[i] = Conv1("side.proj" + std::to_string(i), cfg.channels_at(i),
                             cfg.channels_at(i), rng, /*zero=*/true);
      }
    }
  }

  bool attn_at(int level) const {
    int res = cfg.resolution_at(level);
    return std::find(cfg.attention_resolutions.begin(),
                     cfg.attention_resolutions.end(),
                     res) != cfg.attention_resolutions.end();
  }

  Tensor with_coords(const Tensor& planes) const {
    if (!cfg.coord_features) return planes;
    int c = planes.shape[0], h = planes.shape[1], w = planes.shape[2];
    Tensor out({c + 2, h, w});
    std::copy(planes.data.begin(), planes.data.end(), out.data.begin());
    size_t hw = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double ry = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
        double rx = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
        out.data[static_cast<size_t>(c) * hw + y * static_cast<size_t>(w) + x] = ry;
        out.data[(static_cast<size_t>(c) + 1) * hw + y * static_cast<size_t>(w) + x] = rx;
      }
    return out;
  }

  DenoiseOutput forward(Tape& t, const Tensor& z_t, int step, Var text,
                        const ColorMap* condition) {
    if (z_t.shape != std::vector<int>{cfg.latent_channels, cfg.latent_h, cfg.latent_w})
      fail(ErrorKind::Shape, "z_t shape " + z_t.shape_str() +
                                 " does not match the configured latent geometry");
    if (condition && !cfg.side_network)
      fail(ErrorKind::Mode, "conditioning supplied to a model without a side network");
    if (text->value.shape.size() != 2 || text->value.shape[1] != cfg.text_dim)
      fail(ErrorKind::Shape, "text embedding width mismatch");

    Var temb_row = t.input([&] {
      Tensor row({1, cfg.time_dim});
      Tensor code = sinusoidal_code(static_cast<double>(step), cfg.time_dim);
      row.data = code.data;
      return row;
    }());
    Var temb = time2.fwd(t, ad::silu(t, time1.fwd(t, temb_row)));

    DenoiseOutput out;
    int L = cfg.levels();

    // encoder
    Var x = conv_in.fwd(t, t.input(with_coords(z_t)));
    std::vector<Var> skips(L, nullptr);
    for (int i = 0; i < L; ++i) {
      if (i > 0) x = ad::avgpool2(t, x);
      x = enc[i].fwd(t, x, temb);
      if (enc_has_attn[i]) {
        auto [y, a] = enc_attn[i].fwd(t, x, text);
        x = y;
        record(out, a, cfg.resolution_at(i));
      }
      skips[i] = x;
    }

    // side network: zero projections keep a fresh side net inert
    if (condition) {
      Tensor cond_latent = colormap_to_latent(*condition);
      if (cond_latent.shape[1] != cfg.latent_h || cond_latent.shape[2] != cfg.latent_w)
        fail(ErrorKind::Shape, "condition size does not match latent geometry");
      Var s = side_conv_in.fwd(t, t.input(with_coords(cond_latent)));
      for (int i = 0; i < L; ++i) {
        if (i > 0) s = ad::avgpool2(t, s);
        s = side_enc[i].fwd(t, s, temb);
        skips[i] = ad::add(t, skips[i], side_proj[i].fwd(t, s));
      }
    }

    // bottleneck + decoder
    x = mid.fwd(t, skips[L - 1], temb);
    for (int i = L - 2; i >= 0; --i) {
      x = ad::upsample2(t, x);
      x = dec[i].fwd(t, ad::concat_ch(t, x, skips[i]), temb);
      if (dec_has_attn[i]) {
        auto [y, a] = dec_attn[i].fwd(t, x, text);
        x = y;
        record(out, a, cfg.resolution_at(i));
      }
    }
    out.eps = out_conv.fwd(t, ad::silu(t, out_norm.fwd(t, x)));
    return out;
  }

  void record(DenoiseOutput& out, Var map, int res) {
    AttentionRecord rec;
    rec.layer_id = static_cast<int>(out.attn.layers.size());
    rec.h = res;
    rec.w = map->value.shape[0] / res;
    rec.map = map;
    out.attn.layers.push_back(rec);
  }

  std::vector<Param*> params() {
    std::vector<Param*> ps;
    ps.insert(ps.end(), {&conv_in.w, &conv_in.b, &time1.w, &time1.b, &time2.w,
                         &time2.b});
    for (size_t i = 0; i < enc.size(); ++i) {
      enc[i].collect(ps);
      if (enc_has_attn[i]) enc_attn[i].collect(ps);
    }
    mid.collect(ps);
    for (int i = static_cast<int>(dec.size()) - 2; i >= 0; --i) {
      dec[i].collect(ps);
      if (dec_has_attn[i]) dec_attn[i].collect(ps);
    }
    ps.insert(ps.end(), {&out_norm.g, &out_norm.b, &out_conv.w, &out_conv.b});
    if (cfg.side_network) {
      ps.insert(ps.end(), {&side_conv_in.w, &side_conv_in.b});
      for (size_t i = 0; i < side_enc.size(); ++i) {
        side_enc[i].collect(ps);
        ps.insert(ps.end(), {&side_proj[i].w, &side_proj[i].b});
      }
    }
    return ps;
  }
};

}  // namespace detail

Denoiser::Denoiser(const DenoiserConfig& config, uint64_t init_seed)
    : impl_(std::make_unique<detail::DenoiserImpl>(config, init_seed)) {}
Denoiser::~Denoiser() = default;
Denoiser::Denoiser(Denoiser&&) noexcept = default;
Denoiser& Denoiser::operator=(Denoiser&&) noexcept = default;

DenoiseOutput Denoiser::forward(ad::Tape& tape, const Tensor& z_t, int t, ad::Var text,
                                const ColorMap* condition) {
  return impl_->forward(tape, z_t, t, text, condition);
}

const DenoiserConfig& Denoiser::config() const { return impl_->cfg; }

std::vector<ad::Param*> Denoiser::params() { return impl_->params(); }

}  // namespace changediff
