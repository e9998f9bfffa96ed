#include "maskprop/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "maskprop/baseline.hpp"

namespace maskprop {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, "train config: epochs must be >= 1");
  require(lr_final < lr_init, "train config: lr_final must be below lr_init");
  require(lr_init > 0 && lr_final > 0, "train config: learning rates must be positive");
  require(final_lr_epochs >= 0, "train config: final_lr_epochs must be >= 0");
  require(tbptt_chunk >= 1, "train config: tbptt_chunk must be >= 1");
  require(lambda >= 0, "train config: lambda must be >= 0");
  require(warmup_epochs >= 0, "train config: warmup_epochs must be >= 0");
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("cannot open for writing: " + path);
  f << "epoch,patient,step_range,loss,alpha,beta,lr\n";
  for (const auto& r : log.rows)
    f << r.epoch << ',' << r.patient << ',' << r.step_begin << '-' << r.step_end << ','
      << g17(r.loss) << ',' << g17(r.alpha) << ',' << g17(r.beta) << ',' << g17(r.lr) << '\n';
}

// ---------------------------------------------------------------------------
// pseudo-label buffer
// ---------------------------------------------------------------------------

void PseudoLabelBuffer::init(const MaskVolume& gt, const AnnotationSchedule& sched) {
  require(!sched.indices.empty(), "pseudo-label buffer: empty schedule");
  for (int idx : sched.indices)
    require(idx >= 0 && idx < gt.depth, "pseudo-label buffer: schedule index out of range");
  schedule = &sched;
  // Before the model has produced any estimate, the best available label for
  // an unannotated slice is its nearest annotation; zero-order propagation
  // seeds the buffer with exactly that. Model estimates replace these as
  // training visits each slice.
  MaskVolume annotated(gt.depth, gt.height, gt.width, gt.spacing);
  for (int idx : sched.indices)
    std::copy_n(&gt.data[static_cast<long>(idx) * gt.slice_size()], gt.slice_size(),
                &annotated.data[static_cast<long>(idx) * annotated.slice_size()]);
  labels = zero_order_propagate(annotated, sched);
  has_value.assign(static_cast<std::size_t>(gt.depth), 1);
}

Tensor PseudoLabelBuffer::window_target(int start, int w) const {
  require(schedule != nullptr, "pseudo-label buffer not initialized");
  Tensor t({w, labels.height, labels.width, 2});
  for (int k = 0; k < w; ++k) {
    int src = start + k;
    require(src >= 0 && src < labels.depth, "pseudo-label buffer: window out of range");
    // not visited yet: borrow the nearest lower slice that has a value
    while (src > 0 && !has_value[static_cast<std::size_t>(src)]) --src;
    require(has_value[static_cast<std::size_t>(src)],
            "pseudo-label buffer: no value available (seed slices missing?)");
    const std::uint8_t* sl = &labels.data[static_cast<long>(src) * labels.slice_size()];
    for (long i = 0; i < labels.slice_size(); ++i) {
      const double fg = sl[i] ? 1.0 : 0.0;
      t.v[(static_cast<long>(k) * labels.slice_size() + i) * 2] = fg;
      t.v[(static_cast<long>(k) * labels.slice_size() + i) * 2 + 1] = 1.0 - fg;
    }
  }
  return t;
}

void PseudoLabelBuffer::refresh(int start, const Tensor& probs) {
  require(schedule != nullptr, "pseudo-label buffer not initialized");
  const int w = probs.dims[0];
  for (int k = 0; k < w; ++k) {
    const int t = start + k;
    if (schedule->is_annotated(t)) continue;  // GT is never overwritten
    for (int y = 0; y < labels.height; ++y)
      for (int x = 0; x < labels.width; ++x)
        labels.at(t, y, x) = probs.at4(k, y, x, 0) > 0.5 ? 1 : 0;
    has_value[static_cast<std::size_t>(t)] = 1;
  }
}

std::vector<std::size_t> decremental_curriculum(std::size_t n_patients,
                                                const std::vector<AnnotationSchedule>& schedules) {
  require(schedules.size() == n_patients, "decremental_curriculum: misaligned lengths");
  std::vector<std::size_t> order(n_patients);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return schedules[a].count() > schedules[b].count();
  });
  return order;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

void Adam::init(const ParamStore& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const auto& [name, p] : params.items) {
    m.emplace_back(p->val.dims);
    v.emplace_back(p->val.dims);
  }
}

void Adam::step(const ParamStore& params, double lr) {
  require(m.size() == params.items.size(), "adam: optimizer not initialized for these params");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    auto& p = params.items[i].second;
    for (long j = 0; j < p->val.numel(); ++j) {
      const double g = p->grad.v[j];
      m[i].v[j] = beta1 * m[i].v[j] + (1.0 - beta1) * g;
      v[i].v[j] = beta2 * v[i].v[j] + (1.0 - beta2) * g * g;
      const double mh = m[i].v[j] / bc1;
      const double vh = v[i].v[j] / bc2;
      p->val.v[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

Tensor binarized_feedback(const Tensor& probs) {
  Tensor out(probs.dims);
  for (long i = 0; i < probs.numel(); i += 2) {
    const double fg = probs.v[i] > 0.5 ? 1.0 : 0.0;
    out.v[i] = fg;
    out.v[i + 1] = 1.0 - fg;
  }
  return out;
}

}  // namespace

Checkpoint train(const std::vector<TrainPatient>& patients, const NetConfig& net_cfg,
                 const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  net_cfg.validate();
  require(!patients.empty(), "train: no patients");
  const int w = net_cfg.w;
  for (const auto& p : patients) {
    require(p.volume.height == net_cfg.in_hw && p.volume.width == net_cfg.in_hw,
            "train: volume " + p.name + " does not match config in_hw");
    require(p.volume.depth >= w, "train: volume " + p.name + " shallower than the window");
    require(p.gt.depth == p.volume.depth && p.gt.height == p.volume.height &&
                p.gt.width == p.volume.width,
            "train: mask/volume shape mismatch for " + p.name);
    if (cfg.mode == TrainMode::few_shot)
      require(p.schedule.covers_seed(w),
              "train: schedule for " + p.name + " must annotate slices [0, w-1]");
  }

  ModelState state = make_model(net_cfg, cfg.seed);
  state.training = true;
  Adam opt;
  opt.init(state.params);
  state.params.zero_grads();

  std::vector<AnnotationSchedule> schedules;
  for (const auto& p : patients) schedules.push_back(p.schedule);
  std::vector<std::size_t> order(patients.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.mode == TrainMode::few_shot)
    order = decremental_curriculum(patients.size(), schedules);

  std::vector<PseudoLabelBuffer> buffers(patients.size());
  if (cfg.mode == TrainMode::few_shot)
    for (std::size_t i = 0; i < patients.size(); ++i)
      buffers[i].init(patients[i].gt, patients[i].schedule);

  TrainLog local_log;
  TrainLog& tl = log ? *log : local_log;

  auto a_node = state.params.get("loss.a");
  auto b_node = state.params.get("loss.b");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        epoch >= cfg.epochs - cfg.final_lr_epochs ? cfg.lr_final : cfg.lr_init;
    const bool live_refresh =
        cfg.mode == TrainMode::few_shot && epoch >= cfg.warmup_epochs;
    double epoch_loss_acc = 0.0;
    long epoch_steps = 0;

    for (std::size_t oi = 0; oi < order.size(); ++oi) {
      const auto pi = order[oi];
      const auto& patient = patients[pi];
      const int n_steps = patient.volume.depth - w + 1;
      const int half = (n_steps + 1) / 2;

      state.reset_carry();
      ag::Tape tape;
      std::vector<ag::NodeP> chunk_tis;
      std::vector<double> chunk_ti_vals;
      int chunk_begin = 0;
      Tensor prev_probs;  // previous window's prediction (full mode feedback)

      auto flush = [&](int step_end) {
        if (chunk_tis.empty()) return;
        auto l2 = ag::sum_sq(tape, state.params.items[0].second);
        for (std::size_t i = 1; i < state.params.items.size(); ++i)
          l2 = ag::s_add(tape, l2, ag::sum_sq(tape, state.params.items[i].second));
        auto loss_node = total_loss_node(tape, chunk_tis, w, n_steps, l2, cfg.lambda,
                                         cfg.window_factor);
        tape.backward(loss_node);
        opt.step(state.params, lr);
        state.params.zero_grads();
        state.detach_carry();

        const double chunk_loss =
            total_loss(chunk_ti_vals, w, l2->val.v[0], cfg.lambda, cfg.window_factor);
        const auto [alpha, beta] = alpha_beta(a_node->val.v[0], b_node->val.v[0]);
        if (!std::isfinite(chunk_loss))
          fail("train: non-finite loss at epoch " + std::to_string(epoch) + " patient " +
               patient.name + " steps [" + std::to_string(chunk_begin) + "," +
               std::to_string(step_end) + "]; alpha=" + g17(alpha) + " beta=" + g17(beta) +
               " lr=" + g17(lr) + "; aborting");
        tl.rows.push_back({epoch, static_cast<int>(pi), chunk_begin, step_end, chunk_loss, alpha,
                           beta, lr});
        epoch_loss_acc += chunk_loss * static_cast<double>(step_end - chunk_begin + 1);
        epoch_steps += step_end - chunk_begin + 1;

        chunk_tis.clear();
        chunk_ti_vals.clear();
        chunk_begin = step_end + 1;
        tape.clear();
      };

      for (int k = 0; k < n_steps; ++k) {
        const Tensor v_win = image_window(patient.volume, k, w);

        Tensor m_prev;
        if (k == 0) {
          m_prev = cfg.mode == TrainMode::few_shot ? buffers[pi].window_target(0, w)
                                                   : mask_window(patient.gt, 0, w);
        } else if (cfg.teacher_forcing) {
          m_prev = mask_window(patient.gt, k - 1, w);
        } else if (cfg.mode == TrainMode::few_shot) {
          m_prev = buffers[pi].window_target(k - 1, w);
        } else {
          m_prev = binarized_feedback(prev_probs);
        }

        Tensor target = cfg.mode == TrainMode::few_shot ? buffers[pi].window_target(k, w)
                                                        : mask_window(patient.gt, k, w);

        auto probs = model_step(tape, state, v_win, m_prev);
        auto [alpha_n, beta_n] = alpha_beta_node(tape, a_node, b_node);
        auto ti = tversky_index_node(tape, probs, tape.constant(target), alpha_n, beta_n);
        chunk_tis.push_back(ti);
        chunk_ti_vals.push_back(ti->val.v[0]);

        prev_probs = probs->val;
        if (live_refresh) buffers[pi].refresh(k, probs->val);

        const bool at_half = (k + 1) == half;
        const bool at_end = (k + 1) == n_steps;
        const bool at_chunk = static_cast<int>(chunk_tis.size()) >= cfg.tbptt_chunk;
        if (at_half || at_end || at_chunk) flush(k);
      }
    }
    tl.epoch_mean_loss.push_back(epoch_steps > 0 ? epoch_loss_acc / static_cast<double>(epoch_steps)
                                                 : 0.0);
  }
  return snapshot(state);
}

}  // namespace maskprop
