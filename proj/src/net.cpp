#include "maskprop/net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace maskprop {

namespace ag = maskprop::ag;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

Tensor uniform_init(std::vector<int> dims, long fan_in, Rng& rng) {
  Tensor t(std::move(dims));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& x : t.v) x = rng.uniform(-bound, bound);
  return t;
}

// decoder widths mirror the encoder: [c3, c2, c1, c0, c0]
std::array<int, 5> decoder_channels(const NetConfig& cfg) {
  return {cfg.channels[3], cfg.channels[2], cfg.channels[1], cfg.channels[0], cfg.channels[0]};
}

constexpr int kStemChannels = 2;  // both streams are lifted to 2 channels

int encoder_in_channels(const NetConfig& cfg, int level) {
  return level == 0 ? kStemChannels : cfg.channels[level - 1];
}

}  // namespace

void NetConfig::validate() const {
  require(w >= 1, "net config: window depth must be >= 1");
  require(in_hw > 0 && in_hw % 32 == 0, "net config: in_hw must be a positive multiple of 32");
  for (int c : channels) require(c > 0, "net config: channel widths must be positive");
  for (int r : atrous_rates) require(r >= 1, "net config: atrous rates must be >= 1");
  require(kernel == 3, "net config: only 3x3x3 kernels are supported");
  require(dropout_enc >= 0 && dropout_enc < 1 && dropout_rec >= 0 && dropout_rec < 1 &&
              dropout_dec >= 0 && dropout_dec < 1,
          "net config: dropout rates must be in [0,1)");
}

ag::NodeP ParamStore::add(const std::string& name, Tensor init) {
  for (const auto& [n, p] : items)
    if (n == name) fail("param '" + name + "' added twice");
  auto node = ag::make_param(std::move(init));
  items.emplace_back(name, node);
  return node;
}

ag::NodeP ParamStore::get(const std::string& name) const {
  for (const auto& [n, p] : items)
    if (n == name) return p;
  fail("unknown param '" + name + "'");
}

long ParamStore::total_size() const {
  long n = 0;
  for (const auto& [name, p] : items) n += p->val.numel();
  return n;
}

void ParamStore::zero_grads() const {
  for (const auto& [name, p] : items) ag::zero_grad(p);
}

ParamStore init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore ps;
  const int k = cfg.bottleneck_c();
  const int f = cfg.bottleneck_hw();

  for (int l = 0; l < 5; ++l) {
    const int ci = encoder_in_channels(cfg, l);
    const int co = cfg.channels[l];
    const std::string base = "encoder.block" + std::to_string(l);
    for (int r = 0; r < 4; ++r)
      ps.add(base + ".dw" + std::to_string(r), uniform_init({ci, 3, 3, 3}, 27, rng));
    ps.add(base + ".pw.w", uniform_init({4 * ci, co}, 4 * ci, rng));
    ps.add(base + ".pw.b", Tensor({co}));
  }
  for (int l = 1; l < 5; ++l) {
    const int c = cfg.channels[l - 1];
    const std::string base = "skipproj.l" + std::to_string(l);
    ps.add(base + ".w", uniform_init({c, c}, c, rng));
    ps.add(base + ".b", Tensor({c}));
  }
  // fusion: two factorized chains over the concatenated bottlenecks
  auto add_axis_conv = [&](const std::string& name, int kt, int ky, int kx, int ci, int co) {
    ps.add(name + ".w", uniform_init({kt, ky, kx, ci, co}, static_cast<long>(kt) * ky * kx * ci, rng));
    ps.add(name + ".b", Tensor({co}));
  };
  add_axis_conv("fusion.a1", cfg.w, 1, 1, 2 * k, k);
  add_axis_conv("fusion.a2", 1, f, 1, k, k);
  add_axis_conv("fusion.a3", 1, 1, f, k, k);
  add_axis_conv("fusion.b1", cfg.w, 1, 1, 2 * k, k);
  add_axis_conv("fusion.b2", 1, 1, f, k, k);
  add_axis_conv("fusion.b3", 1, f, 1, k, k);
  add_axis_conv("fusion.res1", 3, 3, 3, k, k);
  add_axis_conv("fusion.res2", 3, 3, 3, k, k);

  // one convolutional LSTM cell, reused by both directions
  ps.add("lstm.w", uniform_init({1, 3, 3, 2 * k, 4 * k}, 9L * 2 * k, rng));
  {
    Tensor b({4 * k});
    for (int i = k; i < 2 * k; ++i) b.v[i] = 1.0;  // forget gate bias
    ps.add("lstm.b", std::move(b));
  }

  const auto dc = decoder_channels(cfg);
  int cin = k;
  for (int i = 1; i <= 5; ++i) {
    const std::string base = "decoder.up" + std::to_string(i);
    const int co = dc[i - 1];
    ps.add(base + ".tconv.w", uniform_init({cin, 2, 2, co}, cin, rng));
    ps.add(base + ".tconv.b", Tensor({co}));
    if (i <= 4) {
      const int cs = cfg.channels[4 - i];
      ps.add(base + ".skipproj.w", uniform_init({cs, co}, cs, rng));
      ps.add(base + ".skipproj.b", Tensor({co}));
      add_axis_conv(base + ".refine", 3, 3, 3, co, co);
    } else {
      add_axis_conv(base + ".refine", 1, 3, 3, co, co);
    }
    cin = co;
  }
  ps.add("decoder.head.w", uniform_init({dc[4], 2}, dc[4], rng));
  ps.add("decoder.head.b", Tensor({2}));

  ps.add("loss.a", Tensor::scalar(0.0));
  ps.add("loss.b", Tensor::scalar(0.0));
  return ps;
}

ModelState make_model(const NetConfig& cfg, std::uint64_t seed) {
  ModelState st;
  st.cfg = cfg;
  st.params = init_params(cfg, seed);
  st.dropout_rng = Rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return st;
}

void ModelState::reset_carry() {
  const int f = cfg.bottleneck_hw();
  const int k = cfg.bottleneck_c();
  carry_h = ag::make_const(Tensor({1, f, f, k}));
  carry_c = ag::make_const(Tensor({1, f, f, k}));
  carry_ready = true;
}

void ModelState::detach_carry() {
  require(carry_ready, "detach_carry: carry not initialized");
  carry_h = ag::make_const(carry_h->val);
  carry_c = ag::make_const(carry_c->val);
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

std::pair<ag::NodeP, FeaturePyramid> encoder_forward(ag::Tape& tape, const NetConfig& cfg,
                                                     const ParamStore& params, ag::NodeP x,
                                                     const FeaturePyramid* skips,
                                                     Rng* dropout_rng, bool training) {
  require(x->val.rank() == 4, "encoder_forward: expected rank-4 input");
  require(x->val.dims[0] == cfg.w, "encoder_forward: window depth mismatch");
  require(x->val.dims[1] == cfg.in_hw && x->val.dims[2] == cfg.in_hw,
          "encoder_forward: spatial size " + x->val.shape_str() + " does not match config in_hw=" +
              std::to_string(cfg.in_hw));
  require(x->val.dims[3] == 1 || x->val.dims[3] == 2,
          "encoder_forward: input must have 1 (image) or 2 (mask) channels");

  ag::NodeP cur = ag::pad_channels_to(tape, x, kStemChannels);
  FeaturePyramid pyr;
  for (int l = 0; l < 5; ++l) {
    const std::string base = "encoder.block" + std::to_string(l);
    if (skips && l >= 1) {
      const auto& sk = skips->levels[l - 1];
      require(sk != nullptr && sk->val.same_shape(cur->val),
              "encoder_forward: skip level " + std::to_string(l - 1) + " shape mismatch");
      auto proj = ag::conv_pw(tape, sk, params.get("skipproj.l" + std::to_string(l) + ".w"),
                              params.get("skipproj.l" + std::to_string(l) + ".b"));
      cur = ag::add(tape, cur, proj);
    }
    ag::NodeP cat;
    for (int r = 0; r < 4; ++r) {
      auto branch = ag::conv_dw3(tape, cur, params.get(base + ".dw" + std::to_string(r)),
                                 cfg.atrous_rates[r]);
      cat = r == 0 ? branch : ag::concat_c(tape, cat, branch);
    }
    auto z = ag::conv_pw(tape, cat, params.get(base + ".pw.w"), params.get(base + ".pw.b"));
    z = ag::elu(tape, z);
    if (dropout_rng) z = ag::dropout_channels(tape, z, cfg.dropout_enc, *dropout_rng, training);
    z = ag::maxpool_hw(tape, z);
    pyr.levels[l] = z;
    cur = z;
  }
  return {pyr.levels[4], pyr};
}

namespace {

ag::NodeP axis_conv(ag::Tape& tape, const ParamStore& params, const std::string& name, ag::NodeP x,
                    int kt, int ky, int kx) {
  return ag::conv_full(tape, x, params.get(name + ".w"), params.get(name + ".b"), kt, ky, kx);
}

}  // namespace

ag::NodeP global_match(ag::Tape& tape, const NetConfig& cfg, const ParamStore& params, ag::NodeP fv,
                       ag::NodeP fm) {
  require(fv->val.same_shape(fm->val), "global_match: stream shape mismatch");
  const int w = fv->val.dims[0];
  const int f = fv->val.dims[1];
  require(f >= 1, "global_match: bottleneck collapsed below 1");
  auto cat = ag::concat_c(tape, fv, fm);

  auto a = ag::elu(tape, axis_conv(tape, params, "fusion.a1", cat, w, 1, 1));
  a = ag::elu(tape, axis_conv(tape, params, "fusion.a2", a, 1, f, 1));
  a = ag::elu(tape, axis_conv(tape, params, "fusion.a3", a, 1, 1, f));

  auto b = ag::elu(tape, axis_conv(tape, params, "fusion.b1", cat, w, 1, 1));
  b = ag::elu(tape, axis_conv(tape, params, "fusion.b2", b, 1, 1, f));
  b = ag::elu(tape, axis_conv(tape, params, "fusion.b3", b, 1, f, 1));

  auto s = ag::add(tape, a, b);
  auto r = ag::elu(tape, axis_conv(tape, params, "fusion.res1", s, 3, 3, 3));
  r = axis_conv(tape, params, "fusion.res2", r, 3, 3, 3);
  return ag::add(tape, s, r);
}

namespace {

struct LstmCellOut {
  ag::NodeP h;
  ag::NodeP c;
};

LstmCellOut lstm_cell(ag::Tape& tape, const ParamStore& params, int k, ag::NodeP x, ag::NodeP h,
                      ag::NodeP c) {
  auto cat = ag::concat_c(tape, x, h);
  auto gates = ag::conv_full(tape, cat, params.get("lstm.w"), params.get("lstm.b"), 1, 3, 3);
  auto gi = ag::sigmoid(tape, ag::slice_c(tape, gates, 0, k));
  auto gf = ag::sigmoid(tape, ag::slice_c(tape, gates, k, 2 * k));
  auto go = ag::sigmoid(tape, ag::slice_c(tape, gates, 2 * k, 3 * k));
  auto gg = ag::tanh_op(tape, ag::slice_c(tape, gates, 3 * k, 4 * k));
  auto cn = ag::add(tape, ag::mul(tape, gf, c), ag::mul(tape, gi, gg));
  auto hn = ag::mul(tape, go, ag::tanh_op(tape, cn));
  return {hn, cn};
}

}  // namespace

std::array<ag::NodeP, 3> biclstm_forward(ag::Tape& tape, const NetConfig& cfg,
                                         const ParamStore& params, ag::NodeP g, ag::NodeP h_in,
                                         ag::NodeP c_in) {
  const int w = g->val.dims[0];
  const int f = g->val.dims[1];
  const int k = g->val.dims[3];
  require(k == cfg.bottleneck_c(), "biclstm_forward: channel mismatch");
  require(h_in->val.same_shape(Tensor({1, f, f, k})) && c_in->val.same_shape(h_in->val),
          "biclstm_forward: carry shape mismatch");

  std::vector<ag::NodeP> xs(static_cast<std::size_t>(w));
  for (int d = 0; d < w; ++d) xs[static_cast<std::size_t>(d)] = ag::slice_t(tape, g, d);

  std::vector<ag::NodeP> h_fwd(static_cast<std::size_t>(w));
  ag::NodeP h = h_in, c = c_in;
  for (int d = 0; d < w; ++d) {
    auto out = lstm_cell(tape, params, k, xs[static_cast<std::size_t>(d)], h, c);
    h = out.h;
    c = out.c;
    h_fwd[static_cast<std::size_t>(d)] = h;
  }
  const auto h_term = h;
  const auto c_term = c;

  std::vector<ag::NodeP> h_bwd(static_cast<std::size_t>(w));
  ag::NodeP hb = ag::make_const(Tensor({1, f, f, k}));
  ag::NodeP cb = ag::make_const(Tensor({1, f, f, k}));
  for (int d = w - 1; d >= 0; --d) {
    auto out = lstm_cell(tape, params, k, xs[static_cast<std::size_t>(d)], hb, cb);
    hb = out.h;
    cb = out.c;
    h_bwd[static_cast<std::size_t>(d)] = hb;
  }

  std::vector<ag::NodeP> merged(static_cast<std::size_t>(w));
  for (int d = 0; d < w; ++d)
    merged[static_cast<std::size_t>(d)] =
        ag::add(tape, xs[static_cast<std::size_t>(d)],
                ag::add(tape, h_fwd[static_cast<std::size_t>(d)], h_bwd[static_cast<std::size_t>(d)]));
  return {ag::concat_t(tape, merged), h_term, c_term};
}

ag::NodeP decoder_forward(ag::Tape& tape, const NetConfig& cfg, const ParamStore& params,
                          ag::NodeP z, const FeaturePyramid& skips, Rng* dropout_rng,
                          bool training) {
  ag::NodeP cur = z;
  for (int i = 1; i <= 5; ++i) {
    const std::string base = "decoder.up" + std::to_string(i);
    cur = ag::conv_tr22(tape, cur, params.get(base + ".tconv.w"), params.get(base + ".tconv.b"));
    if (i <= 4) {
      const auto& sk = skips.levels[4 - i];
      require(sk != nullptr, "decoder_forward: missing pyramid level");
      require(sk->val.dims[1] == cur->val.dims[1] && sk->val.dims[2] == cur->val.dims[2],
              "decoder_forward: pyramid level " + std::to_string(4 - i) + " mismatch: " +
                  sk->val.shape_str() + " vs " + cur->val.shape_str());
      auto proj = ag::conv_pw(tape, sk, params.get(base + ".skipproj.w"),
                              params.get(base + ".skipproj.b"));
      cur = ag::add(tape, cur, proj);
      cur = axis_conv(tape, params, base + ".refine", cur, 3, 3, 3);
    } else {
      cur = axis_conv(tape, params, base + ".refine", cur, 1, 3, 3);
    }
    cur = ag::elu(tape, cur);
    if (dropout_rng) cur = ag::dropout_channels(tape, cur, cfg.dropout_dec, *dropout_rng, training);
  }
  auto logits = ag::conv_pw(tape, cur, params.get("decoder.head.w"), params.get("decoder.head.b"));
  return ag::softmax_c(tape, logits);
}

ag::NodeP model_step(ag::Tape& tape, ModelState& state, const Tensor& v_win, const Tensor& m_prev) {
  require(state.carry_ready, "model_step: recurrent state not initialized (call reset_carry)");
  const auto& cfg = state.cfg;
  require(v_win.rank() == 4 && v_win.dims[0] == cfg.w && v_win.dims[3] == 1,
          "model_step: image window must be (w,H,W,1)");
  require(m_prev.rank() == 4 && m_prev.dims[0] == cfg.w && m_prev.dims[3] == 2,
          "model_step: mask window must be (w,H,W,2)");

  Rng* rng = state.training ? &state.dropout_rng : nullptr;
  auto xv = ag::make_const(v_win);
  auto xm = ag::make_const(m_prev);
  auto [fv, pyr_v] = encoder_forward(tape, cfg, state.params, xv, nullptr, rng, state.training);
  auto [fm, pyr_m] = encoder_forward(tape, cfg, state.params, xm, &pyr_v, rng, state.training);
  auto g = global_match(tape, cfg, state.params, fv, fm);
  auto [z, h_term, c_term] = biclstm_forward(tape, cfg, state.params, g, state.carry_h, state.carry_c);
  if (rng) z = ag::dropout_channels(tape, z, cfg.dropout_rec, *rng, state.training);
  auto probs = decoder_forward(tape, cfg, state.params, z, pyr_m, rng, state.training);
  state.carry_h = h_term;
  state.carry_c = c_term;
  return probs;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

Checkpoint snapshot(const ModelState& state) {
  Checkpoint ck;
  ck.cfg = state.cfg;
  for (const auto& [name, p] : state.params.items) ck.params.emplace_back(name, p->val);
  return ck;
}

ModelState restore(const Checkpoint& ckpt) {
  ckpt.cfg.validate();
  ModelState st;
  st.cfg = ckpt.cfg;
  for (const auto& [name, t] : ckpt.params) st.params.add(name, t);
  st.dropout_rng = Rng(0);
  st.training = false;
  return st;
}

namespace {

void put_i64(std::ofstream& f, std::int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ofstream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }

std::int64_t get_i64(std::ifstream& f) {
  std::int64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  if (!f) fail("checkpoint: truncated file");
  return v;
}

double get_f64(std::ifstream& f) {
  double v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  if (!f) fail("checkpoint: truncated file");
  return v;
}

constexpr char kMagic[8] = {'M', 'P', 'C', 'K', 'P', 'T', '1', '\n'};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("cannot open for writing: " + path);
  f.write(kMagic, 8);
  put_i64(f, ckpt.cfg.w);
  put_i64(f, ckpt.cfg.in_hw);
  for (int c : ckpt.cfg.channels) put_i64(f, c);
  for (int r : ckpt.cfg.atrous_rates) put_i64(f, r);
  put_i64(f, ckpt.cfg.kernel);
  put_f64(f, ckpt.cfg.dropout_enc);
  put_f64(f, ckpt.cfg.dropout_rec);
  put_f64(f, ckpt.cfg.dropout_dec);
  put_i64(f, static_cast<std::int64_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    put_i64(f, static_cast<std::int64_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_i64(f, t.rank());
    for (int d : t.dims) put_i64(f, d);
    put_i64(f, t.numel());
    f.write(reinterpret_cast<const char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  }
  if (!f) fail("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0) fail("checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.cfg.w = static_cast<int>(get_i64(f));
  ck.cfg.in_hw = static_cast<int>(get_i64(f));
  for (auto& c : ck.cfg.channels) c = static_cast<int>(get_i64(f));
  for (auto& r : ck.cfg.atrous_rates) r = static_cast<int>(get_i64(f));
  ck.cfg.kernel = static_cast<int>(get_i64(f));
  ck.cfg.dropout_enc = get_f64(f);
  ck.cfg.dropout_rec = get_f64(f);
  ck.cfg.dropout_dec = get_f64(f);
  const auto n = get_i64(f);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto name_len = get_i64(f);
    std::string name(static_cast<std::size_t>(name_len), '\0');
    f.read(name.data(), name_len);
    const auto rank = get_i64(f);
    std::vector<int> dims;
    for (std::int64_t d = 0; d < rank; ++d) dims.push_back(static_cast<int>(get_i64(f)));
    const auto numel = get_i64(f);
    Tensor t(dims);
    if (t.numel() != numel) fail("checkpoint: size mismatch for param " + name);
    f.read(reinterpret_cast<char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    if (!f) fail("checkpoint: truncated param " + name);
    ck.params.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace maskprop
