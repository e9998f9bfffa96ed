#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "maskprop/autograd.hpp"
#include "maskprop/loss.hpp"
#include "maskprop/rng.hpp"
#include "maskprop/tensor.hpp"

namespace maskprop {

struct NetConfig {
  int w = 3;        // window depth
  int in_hw = 64;   // square input size; 512 at full scale
  std::array<int, 5> channels{8, 8, 16, 16, 32};  // full scale: 30,30,60,60,120
  std::array<int, 4> atrous_rates{1, 6, 12, 18};
  double dropout_enc = 0.1;
  double dropout_rec = 0.4;
  double dropout_dec = 0.1;
  int kernel = 3;

  void validate() const;
  int bottleneck_hw() const { return in_hw >> 5; }  // five spatial halvings
  int bottleneck_c() const { return channels[4]; }
};

// Ordered named parameter registry. Twins and recurrent directions reuse the
// same entries, so serializing the registry yields exactly one copy of each
// shared block.
struct ParamStore {
  std::vector<std::pair<std::string, ag::NodeP>> items;

  ag::NodeP add(const std::string& name, Tensor init);
  ag::NodeP get(const std::string& name) const;
  long total_size() const;
  void zero_grads() const;
};

ParamStore init_params(const NetConfig& cfg, std::uint64_t seed);

// All learnable state plus the recurrent carry threaded across window steps.
struct ModelState {
  NetConfig cfg;
  ParamStore params;
  Rng dropout_rng{0};
  bool training = false;

  // recurrent carry; nodes so gradients can flow across steps within a chunk
  ag::NodeP carry_h;
  ag::NodeP carry_c;
  bool carry_ready = false;

  void reset_carry();            // zero state at the start of a volume
  void detach_carry();           // cut gradient flow at a TBPTT boundary
};

ModelState make_model(const NetConfig& cfg, std::uint64_t seed);

// Per-level encoder outputs (after pooling); level l has spatial extent
// in_hw / 2^(l+1) with l counted from 0 here.
struct FeaturePyramid {
  std::array<ag::NodeP, 5> levels;
};

// Shared-weight encoder pass. x is (w,H,W,1) for the image stream or
// (w,H,W,2) for the mask stream; 1-channel inputs are zero-padded to the
// common 2-channel stem so both streams use one parameter set. When skips
// is given (mask stream), each level's input is summed with the projected
// image-stream feature of the previous level.
std::pair<ag::NodeP, FeaturePyramid> encoder_forward(ag::Tape& tape, const NetConfig& cfg,
                                                     const ParamStore& params, ag::NodeP x,
                                                     const FeaturePyramid* skips,
                                                     Rng* dropout_rng, bool training);

// Global feature matching: channel concat, two factorized large-kernel
// chains ([w,1,1]->[1,f,1]->[1,1,f] and [w,1,1]->[1,1,f]->[1,f,1]) summed,
// then one residual block.
ag::NodeP global_match(ag::Tape& tape, const NetConfig& cfg, const ParamStore& params,
                       ag::NodeP fv, ag::NodeP fm);

// One convolutional LSTM cell applied forward over the window depth
// (initialized from the carry) and again backward (zero carry); outputs are
// residual-added. Returns (features, terminal forward h, terminal forward c).
std::array<ag::NodeP, 3> biclstm_forward(ag::Tape& tape, const NetConfig& cfg,
                                         const ParamStore& params, ag::NodeP g, ag::NodeP h_in,
                                         ag::NodeP c_in);

// Five transpose-conv upsamplings with refinement merges against the
// mask-stream pyramid, then a 1x1x1 head and per-voxel softmax.
ag::NodeP decoder_forward(ag::Tape& tape, const NetConfig& cfg, const ParamStore& params,
                          ag::NodeP z, const FeaturePyramid& skips, Rng* dropout_rng,
                          bool training);

// Full step: image encoder -> mask encoder (with skips) -> fusion ->
// recurrent module (carry threaded through state) -> decoder.
// v_win is (w,H,W,1), m_prev is (w,H,W,2); result is (w,H,W,2) probabilities.
ag::NodeP model_step(ag::Tape& tape, ModelState& state, const Tensor& v_win,
                     const Tensor& m_prev);

// ---------------------------------------------------------------------------
// Checkpoints: binary container embedding the NetConfig and the parameter
// registry; round-trips bitwise.
// ---------------------------------------------------------------------------
struct Checkpoint {
  NetConfig cfg;
  std::vector<std::pair<std::string, Tensor>> params;
};

Checkpoint snapshot(const ModelState& state);
ModelState restore(const Checkpoint& ckpt);  // evaluation-mode model
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace maskprop
