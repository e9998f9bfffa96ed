#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maskprop/loss.hpp"
#include "maskprop/net.hpp"
#include "maskprop/volume.hpp"

namespace maskprop {

enum class TrainMode { full, few_shot };

struct TrainConfig {
  TrainMode mode = TrainMode::full;
  int epochs = 12;
  double lr_init = 1e-4;
  double lr_final = 1e-5;
  int final_lr_epochs = 2;  // last epochs run at lr_final
  int tbptt_chunk = 6;      // gradient truncation length in window steps
  std::uint64_t seed = 0;
  bool teacher_forcing = false;  // feed GT instead of own predictions (ablation)
  WindowFactor window_factor = WindowFactor::literal;
  double lambda = 1e-5;
  // Few-shot only: epochs during which the pseudo-label buffer stays at its
  // nearest-annotation bootstrap (no refresh), so the model learns from the
  // annotated set before its own noisy estimates become targets.
  int warmup_epochs = 2;

  void validate() const;
};

struct TrainPatient {
  std::string name;
  Volume volume;
  MaskVolume gt;
  AnnotationSchedule schedule;  // used in few-shot mode
};

struct TrainLogRow {
  int epoch = 0;
  int patient = 0;
  int step_begin = 0;
  int step_end = 0;
  double loss = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;            // one per optimizer flush
  std::vector<double> epoch_mean_loss;      // step-weighted mean per epoch
};

// CSV with header epoch,patient,step_range,loss,alpha,beta,lr. Deterministic
// formatting so identical runs produce identical files.
void write_train_log_csv(const TrainLog& log, const std::string& path);

// Targets from GT on annotated slices and pseudo-labels elsewhere; never
// overwrites GT. Slices the model has not visited yet borrow the nearest
// lower slice that has a value.
struct PseudoLabelBuffer {
  MaskVolume labels;
  std::vector<std::uint8_t> has_value;  // per slice
  const AnnotationSchedule* schedule = nullptr;

  void init(const MaskVolume& gt, const AnnotationSchedule& sched);
  Tensor window_target(int start, int w) const;          // (w,H,W,2) one-hot
  void refresh(int start, const Tensor& probs);          // skips annotated slices
};

// Visit order: most-annotated patients first (stable on ties).
std::vector<std::size_t> decremental_curriculum(std::size_t n_patients,
                                                const std::vector<AnnotationSchedule>& schedules);

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Tensor> m, v;

  void init(const ParamStore& params);
  void step(const ParamStore& params, double lr);  // consumes grads; caller zeros them
};

Checkpoint train(const std::vector<TrainPatient>& patients, const NetConfig& net_cfg,
                 const TrainConfig& cfg, TrainLog* log = nullptr);

}  // namespace maskprop
