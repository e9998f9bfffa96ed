#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "maskprop/net.hpp"
#include "test_util.hpp"

using namespace maskprop;
namespace tu = testutil;

namespace {

NetConfig mini_config() {
  NetConfig cfg;
  cfg.w = 3;
  cfg.in_hw = 64;
  cfg.channels = {2, 2, 2, 2, 4};
  return cfg;
}

Tensor random_probs2(std::vector<int> dims, Rng& rng) {
  Tensor t(std::move(dims));
  for (long i = 0; i < t.numel(); i += 2) {
    const double p = rng.uniform(0.05, 0.95);
    t.v[i] = p;
    t.v[i + 1] = 1.0 - p;
  }
  return t;
}

Tensor random_onehot2(std::vector<int> dims, Rng& rng) {
  Tensor t(std::move(dims));
  for (long i = 0; i < t.numel(); i += 2) {
    const double fg = rng.bernoulli(0.35) ? 1.0 : 0.0;
    t.v[i] = fg;
    t.v[i + 1] = 1.0 - fg;
  }
  return t;
}

}  // namespace

TEST_CASE("encoder bottleneck is spatially 1/32 with config channels") {
  const auto cfg = mini_config();
  auto params = init_params(cfg, 1);
  Rng rng(2);
  ag::Tape tape;
  auto x = ag::make_const(tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0));
  auto [bottleneck, pyr] = encoder_forward(tape, cfg, params, x, nullptr, nullptr, false);
  CHECK(bottleneck->val.dims == std::vector<int>{3, 2, 2, 4});
  for (int l = 0; l < 5; ++l) {
    CHECK(pyr.levels[l]->val.dims[1] == 64 >> (l + 1));
    CHECK(pyr.levels[l]->val.dims[3] == cfg.channels[l]);
  }
}

TEST_CASE("identical inputs through both twins give identical outputs") {
  const auto cfg = mini_config();
  auto params = init_params(cfg, 3);
  Rng rng(4);
  const auto x = tu::random_tensor({3, 64, 64, 2}, rng, 0.0, 1.0);
  ag::Tape tape;
  auto [b1, p1] = encoder_forward(tape, cfg, params, ag::make_const(x), nullptr, nullptr, false);
  auto [b2, p2] = encoder_forward(tape, cfg, params, ag::make_const(x), nullptr, nullptr, false);
  CHECK(b1->val.v == b2->val.v);
}

TEST_CASE("encoder rejects mismatched skip pyramids") {
  const auto cfg = mini_config();
  auto params = init_params(cfg, 3);
  Rng rng(4);
  ag::Tape tape;
  auto x = ag::make_const(tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0));
  auto [b, pyr] = encoder_forward(tape, cfg, params, x, nullptr, nullptr, false);
  FeaturePyramid bad = pyr;
  bad.levels[0] = pyr.levels[1];  // wrong spatial size
  auto m = ag::make_const(tu::random_tensor({3, 64, 64, 2}, rng, 0.0, 1.0));
  CHECK_THROWS(encoder_forward(tape, cfg, params, m, &bad, nullptr, false));
}

TEST_CASE("serialized parameters hold one encoder copy and one recurrent cell") {
  const auto cfg = mini_config();
  auto state = make_model(cfg, 7);
  const auto ckpt = snapshot(state);
  std::set<std::string> names;
  long lstm_params = 0;
  int encoder_blocks = 0;
  for (const auto& [name, t] : ckpt.params) {
    CHECK(names.insert(name).second);  // unique
    if (name.rfind("lstm.", 0) == 0) lstm_params += t.numel();
    if (name.rfind("encoder.block", 0) == 0 && name.find(".pw.w") != std::string::npos)
      ++encoder_blocks;
  }
  CHECK(encoder_blocks == 5);  // one shared set, five blocks
  const int k = cfg.bottleneck_c();
  // exactly one convolutional LSTM cell: (1,3,3,2k,4k) weights + 4k bias
  CHECK(lstm_params == 9L * 2 * k * 4 * k + 4 * k);
}

TEST_CASE("global_match output shape and zero-input determinism") {
  const auto cfg = mini_config();
  auto params = init_params(cfg, 5);
  ag::Tape tape;
  const int f = cfg.bottleneck_hw();
  const int k = cfg.bottleneck_c();
  auto zero = ag::make_const(Tensor({cfg.w, f, f, k}));
  auto out1 = global_match(tape, cfg, params, zero, zero);
  auto out2 = global_match(tape, cfg, params, zero, zero);
  CHECK(out1->val.dims == std::vector<int>{cfg.w, f, f, k});
  CHECK(out1->val.v == out2->val.v);
  for (double v : out1->val.v) CHECK(std::isfinite(v));
}

TEST_CASE("global_match receptive field spans the whole grid") {
  NetConfig cfg = mini_config();
  cfg.in_hw = 128;  // f = 4
  auto params = init_params(cfg, 6);
  Rng rng(8);
  const int f = cfg.bottleneck_hw();
  const int k = cfg.bottleneck_c();
  const auto fv = tu::random_tensor({cfg.w, f, f, k}, rng);
  const auto fm = tu::random_tensor({cfg.w, f, f, k}, rng);

  auto forward = [&](const Tensor& a, const Tensor& b) {
    ag::Tape tape;
    return global_match(tape, cfg, params, ag::make_const(a), ag::make_const(b))->val;
  };
  const auto base = forward(fv, fm);

  // perturb a far corner of each input; some output voxel must move
  for (int which = 0; which < 2; ++which) {
    Tensor a = fv, b = fm;
    Tensor& target = which == 0 ? a : b;
    target.at4(cfg.w - 1, f - 1, f - 1, k - 1) += 0.37;
    const auto out = forward(a, b);
    double delta = 0.0;
    for (long i = 0; i < out.numel(); ++i) delta = std::max(delta, std::fabs(out.v[i] - base.v[i]));
    CHECK(delta > 1e-9);
    // and specifically the opposite corner is reached (full-grid coverage)
    CHECK(std::fabs(out.at4(0, 0, 0, 0) - base.at4(0, 0, 0, 0)) > 1e-12);
  }
}

TEST_CASE("biclstm is bounded on zero input and propagates carry") {
  const auto cfg = mini_config();
  auto params = init_params(cfg, 9);
  const int f = cfg.bottleneck_hw();
  const int k = cfg.bottleneck_c();
  {
    ag::Tape tape;
    auto zero = ag::make_const(Tensor({cfg.w, f, f, k}));
    auto zc = ag::make_const(Tensor({1, f, f, k}));
    auto [out, h, c] = biclstm_forward(tape, cfg, params, zero, zc, zc);
    for (double v : h->val.v) CHECK(std::fabs(v) <= 1.0);  // tanh-bounded pre-merge
    for (double v : out->val.v) CHECK(std::fabs(v) <= 2.0);
  }
  {
    Rng rng(10);
    const auto g = tu::random_tensor({cfg.w, f, f, k}, rng);
    ag::Tape tape;
    auto zc = ag::make_const(Tensor({1, f, f, k}));
    auto carried = ag::make_const(tu::random_tensor({1, f, f, k}, rng, -0.5, 0.5));
    auto [out_zero, h0, c0] =
        biclstm_forward(tape, cfg, params, ag::make_const(g), zc, zc);
    auto [out_carry, h1, c1] =
        biclstm_forward(tape, cfg, params, ag::make_const(g), carried, ag::make_const(carried->val));
    CHECK(out_zero->val.v != out_carry->val.v);  // state actually propagates
  }
}

TEST_CASE("decoder output is softmax-normalized at full resolution") {
  const auto cfg = mini_config();
  auto state = make_model(cfg, 11);
  state.training = false;
  state.reset_carry();
  Rng rng(12);
  ag::Tape tape;
  auto probs = model_step(tape, state, tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0),
                          random_onehot2({3, 64, 64, 2}, rng));
  CHECK(probs->val.dims == std::vector<int>{3, 64, 64, 2});
  for (long i = 0; i < probs->val.numel(); i += 2) {
    const double s = probs->val.v[i] + probs->val.v[i + 1];
    CHECK(std::fabs(s - 1.0) < 1e-6);
    CHECK(probs->val.v[i] > 0.0);
    CHECK(probs->val.v[i] < 1.0);
  }
}

TEST_CASE("model_step requires an initialized carry and is deterministic in eval mode") {
  const auto cfg = mini_config();
  auto state = make_model(cfg, 13);
  Rng rng(14);
  const auto v = tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0);
  const auto m = random_onehot2({3, 64, 64, 2}, rng);
  {
    ag::Tape tape;
    CHECK_THROWS(model_step(tape, state, v, m));
  }
  state.training = false;
  auto run = [&] {
    auto st = restore(snapshot(state));
    st.reset_carry();
    ag::Tape tape;
    return model_step(tape, st, v, m)->val;
  };
  const auto out1 = run();
  const auto out2 = run();
  CHECK(out1.v == out2.v);
}

TEST_CASE("every parameter group receives gradient on random data") {
  const auto cfg = mini_config();
  auto state = make_model(cfg, 15);
  state.training = false;  // keep the probe deterministic
  state.reset_carry();
  state.params.zero_grads();
  Rng rng(16);
  ag::Tape tape;
  auto probs = model_step(tape, state, tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0),
                          random_onehot2({3, 64, 64, 2}, rng));
  auto [alpha, beta] =
      alpha_beta_node(tape, state.params.get("loss.a"), state.params.get("loss.b"));
  auto ti = tversky_index_node(tape, probs, tape.constant(random_onehot2({3, 64, 64, 2}, rng)),
                               alpha, beta);
  auto l2 = ag::s_add(tape, ag::sum_sq(tape, state.params.get("loss.a")),
                      ag::sum_sq(tape, state.params.get("loss.b")));
  auto loss = total_loss_node(tape, {ti}, cfg.w, 1, l2, 1e-5, WindowFactor::literal);
  tape.backward(loss);

  std::map<std::string, double> group_norm;
  for (const auto& [name, p] : state.params.items) {
    const auto group = name.substr(0, name.find('.'));
    for (double g : p->grad.v) group_norm[group] += std::fabs(g);
  }
  for (const auto& [group, norm] : group_norm) {
    INFO("group ", group);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("autodiff gradients match finite differences on 100 sampled parameters") {
  const auto cfg = mini_config();
  auto state = make_model(cfg, 17);
  state.training = false;
  Rng rng(18);
  const auto v = tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0);
  const auto m = random_probs2({3, 64, 64, 2}, rng);
  const auto target = random_onehot2({3, 64, 64, 2}, rng);

  auto loss_value = [&]() {
    auto st = restore(snapshot(state));
    st.training = false;
    st.reset_carry();
    ag::Tape tape;
    auto probs = model_step(tape, st, v, m);
    auto [alpha, beta] = alpha_beta_node(tape, st.params.get("loss.a"), st.params.get("loss.b"));
    auto ti = tversky_index_node(tape, probs, tape.constant(target), alpha, beta);
    auto l2 = ag::s_add(tape, ag::sum_sq(tape, st.params.get("loss.a")),
                        ag::sum_sq(tape, st.params.get("loss.b")));
    auto loss = total_loss_node(tape, {ti}, cfg.w, 1, l2, 1e-5, WindowFactor::literal);
    return loss->val.v[0];
  };

  // analytic gradients once
  state.reset_carry();
  state.params.zero_grads();
  ag::Tape tape;
  auto probs = model_step(tape, state, v, m);
  auto [alpha, beta] =
      alpha_beta_node(tape, state.params.get("loss.a"), state.params.get("loss.b"));
  auto ti = tversky_index_node(tape, probs, tape.constant(target), alpha, beta);
  auto l2 = ag::s_add(tape, ag::sum_sq(tape, state.params.get("loss.a")),
                      ag::sum_sq(tape, state.params.get("loss.b")));
  auto loss = total_loss_node(tape, {ti}, cfg.w, 1, l2, 1e-5, WindowFactor::literal);
  tape.backward(loss);

  // sample 100 parameter coordinates across all tensors
  Rng pick(19);
  double worst = 0.0;
  int checked = 0;
  const double eps = 3e-6;
  while (checked < 100) {
    const auto pi = static_cast<std::size_t>(pick.raw() % state.params.items.size());
    auto& p = state.params.items[pi].second;
    const auto ci = static_cast<long>(pick.raw() % static_cast<std::uint64_t>(p->val.numel()));
    const double keep = p->val.v[ci];
    p->val.v[ci] = keep + eps;
    const double fp = loss_value();
    p->val.v[ci] = keep - eps;
    const double fm = loss_value();
    p->val.v[ci] = keep;
    const double fd = (fp - fm) / (2 * eps);
    const double ad = p->grad.v[ci];
    const double rel = std::fabs(fd - ad) / std::max({std::fabs(fd), std::fabs(ad), 1e-7});
    worst = std::max(worst, rel);
    ++checked;
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("checkpoints round-trip bitwise through disk") {
  const auto cfg = mini_config();
  auto state = make_model(cfg, 21);
  const auto path =
      (std::filesystem::temp_directory_path() / "net_roundtrip.ckpt").string();
  const auto ckpt = snapshot(state);
  save_checkpoint(ckpt, path);
  const auto back = load_checkpoint(path);
  CHECK(back.cfg.in_hw == cfg.in_hw);
  CHECK(back.cfg.channels == cfg.channels);
  REQUIRE(back.params.size() == ckpt.params.size());
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    CHECK(back.params[i].first == ckpt.params[i].first);
    CHECK(back.params[i].second.v == ckpt.params[i].second.v);
  }
  // bitwise-equal forward outputs
  Rng rng(22);
  const auto v = tu::random_tensor({3, 64, 64, 1}, rng, 0.0, 1.0);
  const auto m = random_onehot2({3, 64, 64, 2}, rng);
  auto run = [&](const Checkpoint& c) {
    auto st = restore(c);
    st.reset_carry();
    ag::Tape tape;
    return model_step(tape, st, v, m)->val;
  };
  CHECK(run(ckpt).v == run(back).v);
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
