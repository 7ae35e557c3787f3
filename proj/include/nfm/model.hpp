#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nfm/autodiff.hpp"
#include "nfm/freq_manip.hpp"
#include "nfm/inr.hpp"
#include "nfm/rng.hpp"

namespace nfm {

enum class HeadKind {
  Pointwise,  ///< d -> d_y at every output position
  Pooled,     ///< global average pooling over positions, then d -> d_y
};

struct ModelConfig {
  std::size_t channels = 1;     ///< c, input channels seen by the model
  std::size_t hidden = 32;      ///< d
  std::size_t blocks = 1;       ///< mixer blocks
  std::size_t h0 = 32;          ///< Fourier-feature width of both INRs
  std::size_t inr_hidden = 32;
  std::size_t inr_layers = 3;
  double w0 = 30.0;
  double ff_scale = 128.0;
  std::size_t proj_width = 64;  ///< width of the sine/cosine branch of the input projection
  double proj_freq = 1.0;       ///< frequency scaling of that branch
  std::size_t mlp_ratio = 2;    ///< channel-MLP expansion
  double dropout = 0.0;
  HeadKind head = HeadKind::Pointwise;
  std::size_t out_dim = 1;      ///< d_y

  void validate() const;
  InrConfig inr() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Training-time switches for a forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  ///< required when training with dropout > 0
};

/// Output of the frequency-token block for one forward pass.
struct EmbeddingState {
  ad::Var z0;           ///< [B, L, d] temporal embedding
  ad::Var spectrum;     ///< [B, K_L, d, 2] Z0 = extended spectrum + tokens
  ad::Var tokens;       ///< [K_L, d, 2] learnable frequency tokens V
  ExtensionFactors factors;
  std::size_t length = 0;  ///< L
  std::vector<double> tau;
};

/// NFM backbone plus a task predictor. Parameters are drawn once from the
/// seed in a fixed order.
class NfmModel {
 public:
  NfmModel(const ModelConfig& config, std::uint64_t seed);
  NfmModel(const NfmModel&) = delete;
  NfmModel& operator=(const NfmModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }
  std::size_t param_count() const { return store_.count(); }

  /// Frozen Fourier-feature frequencies of every INR, in a fixed order.
  std::vector<double> frozen_constants() const;
  void set_frozen_constants(std::span<const double> values);

  /// x [B, N, c] -> [B, N, d]: W_l x + W_2 [sin(w(W_1 x + b)); cos(w(W_1 x + b))].
  ad::Var input_projection(ad::Tape& tape, ad::Var x, const ForwardContext& ctx) const;
  /// Extends the projected spectrum to L points and adds the frequency tokens.
  EmbeddingState lft(ad::Tape& tape, ad::Var projected, const ExtensionFactors& factors) const;
  /// Global filter irfft(R(z0) * rfft(z)); `filter` receives R when non-null.
  ad::Var inff(ad::Tape& tape, ad::Var z, const EmbeddingState& state, std::size_t block, ad::Var* filter = nullptr) const;
  /// Pointwise two-layer MLP over channels. `block == blocks` selects the final block.
  ad::Var channel_mlp(ad::Tape& tape, ad::Var z, std::size_t block, const ForwardContext& ctx) const;
  /// LayerNorm(z + INFF(ChannelMLP(z))).
  ad::Var mixer_block(ad::Tape& tape, ad::Var z, const EmbeddingState& state, std::size_t block,
                      const ForwardContext& ctx, ad::Var* filter = nullptr) const;
  /// LayerNorm(z + ChannelMLP(z)) after the last mixer block.
  ad::Var final_block(ad::Tape& tape, ad::Var z, const ForwardContext& ctx) const;

  /// x [B, N, c] -> z [B, L, d]. `filters`, when given, collects R of every block.
  ad::Var backbone(ad::Tape& tape, ad::Var x, const ExtensionFactors& factors, const ForwardContext& ctx,
                   std::vector<ad::Var>* filters = nullptr) const;
  /// Predictor on the latent sequence: [B, L, d_y] or [B, d_y].
  ad::Var head(ad::Tape& tape, ad::Var z) const;
  ad::Var forward(ad::Tape& tape, ad::Var x, const ExtensionFactors& factors, const ForwardContext& ctx) const;

 private:
  ad::Var param(ad::Tape& tape, const std::string& name) const { return tape.param(store_.get(name)); }

  ModelConfig config_;
  // graph leaves accumulate gradients into the store during const forward passes
  mutable ad::ParameterStore store_;
  std::vector<Siren> block_inrs_;
  Siren token_inr_;
};

/// Exact count of trainable scalars for a configuration (frozen constants excluded).
std::size_t param_count(const ModelConfig& config);

}  // namespace nfm
