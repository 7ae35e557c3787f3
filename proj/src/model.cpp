#include "nfm/model.hpp"

#include <cmath>

#include "nfm/error.hpp"

namespace nfm {
namespace {

void fill_uniform(ad::Parameter& p, Rng& rng, double bound) {
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

std::string block_name(std::size_t block, std::size_t blocks) {
  return block == blocks ? std::string("final") : "block" + std::to_string(block);
}

}  // namespace

void ModelConfig::validate() const {
  if (channels == 0 || hidden == 0 || proj_width == 0 || mlp_ratio == 0 || out_dim == 0) {
    throw Error("model: channels, hidden, proj_width, mlp_ratio and out_dim must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw Error("model: dropout must be in [0, 1)");
  inr().validate();
}

InrConfig ModelConfig::inr() const {
  InrConfig c;
  c.h0 = h0;
  c.hidden = inr_hidden;
  c.out_dim = hidden;
  c.layers = inr_layers;
  c.w0 = w0;
  c.ff_scale = ff_scale;
  return c;
}

NfmModel::NfmModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t c = config_.channels, d = config_.hidden, p = config_.proj_width;

  // input projection
  fill_uniform(store_.add("proj.linear", {d, c}), rng, 1.0 / std::sqrt(static_cast<double>(c)));
  fill_uniform(store_.add("proj.w1", {p, c}), rng, 1.0 / static_cast<double>(c));
  fill_uniform(store_.add("proj.b1", {p}), rng, 1.0 / std::sqrt(static_cast<double>(c)));
  fill_uniform(store_.add("proj.w2", {d, 2 * p}), rng, 1.0 / std::sqrt(static_cast<double>(2 * p)));

  token_inr_ = Siren(config_.inr(), store_, "lft.phi", rng);

  const std::size_t wide = config_.mlp_ratio * d;
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_wide = 1.0 / std::sqrt(static_cast<double>(wide));
  auto add_mlp = [&](const std::string& prefix) {
    fill_uniform(store_.add(prefix + ".mlp.w1", {wide, d}), rng, inv_d);
    fill_uniform(store_.add(prefix + ".mlp.b1", {wide}), rng, inv_d);
    fill_uniform(store_.add(prefix + ".mlp.w2", {d, wide}), rng, inv_wide);
    fill_uniform(store_.add(prefix + ".mlp.b2", {d}), rng, inv_wide);
    ad::Parameter& gain = store_.add(prefix + ".norm.gain", {d});
    std::fill(gain.value.begin(), gain.value.end(), 1.0);
    store_.add(prefix + ".norm.shift", {d});
  };

  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string prefix = block_name(b, config_.blocks);
    add_mlp(prefix);
    block_inrs_.emplace_back(config_.inr(), store_, prefix + ".inff.phi", rng);
    fill_uniform(store_.add(prefix + ".inff.w1", {d, d, 2}), rng, inv_d);
    fill_uniform(store_.add(prefix + ".inff.b1", {d, 2}), rng, inv_d);
    fill_uniform(store_.add(prefix + ".inff.w2", {d, d, 2}), rng, inv_d);
    fill_uniform(store_.add(prefix + ".inff.b2", {d, 2}), rng, inv_d);
  }
  add_mlp(block_name(config_.blocks, config_.blocks));

  fill_uniform(store_.add("head.w", {config_.out_dim, d}), rng, inv_d);
  fill_uniform(store_.add("head.b", {config_.out_dim}), rng, inv_d);
}

std::vector<double> NfmModel::frozen_constants() const {
  std::vector<double> out(token_inr_.frequencies().begin(), token_inr_.frequencies().end());
  for (const Siren& s : block_inrs_) out.insert(out.end(), s.frequencies().begin(), s.frequencies().end());
  return out;
}

void NfmModel::set_frozen_constants(std::span<const double> values) {
  const std::size_t per = config_.h0 / 2;
  if (values.size() != per * (1 + block_inrs_.size())) throw Error("model: frozen constant count mismatch");
  token_inr_.set_frequencies(values.subspan(0, per));
  for (std::size_t b = 0; b < block_inrs_.size(); ++b) block_inrs_[b].set_frequencies(values.subspan(per * (b + 1), per));
}

ad::Var NfmModel::input_projection(ad::Tape& tape, ad::Var x, const ForwardContext& ctx) const {
  if (x.rank() != 3 || x.dim(2) != config_.channels) {
    throw Error("input_projection: expected [B, N, " + std::to_string(config_.channels) + "], got " +
                ad::to_string(x.shape()));
  }
  ad::Var lin = ad::linear(x, param(tape, "proj.linear"));
  ad::Var pre = ad::scale(ad::linear(x, param(tape, "proj.w1"), param(tape, "proj.b1")), config_.proj_freq);
  const ad::Var branches[] = {ad::sin(pre), ad::cos(pre)};
  ad::Var act = ad::concat(branches, 2);
  ad::Var out = ad::add(lin, ad::linear(act, param(tape, "proj.w2")));
  if (ctx.training && config_.dropout > 0.0) out = ad::dropout(out, config_.dropout, *ctx.rng, true);
  return out;
}

EmbeddingState NfmModel::lft(ad::Tape& tape, ad::Var projected, const ExtensionFactors& factors) const {
  if (projected.rank() != 3 || projected.dim(2) != config_.hidden) {
    throw Error("lft: expected [B, N, d], got " + ad::to_string(projected.shape()));
  }
  const ExtensionMap map = extension_map(projected.dim(1), factors);
  EmbeddingState state;
  state.factors = factors;
  state.length = map.n_out;
  state.tau = time_grid(map.n_out);

  ad::Var extended = ad::extend_spectrum(ad::rfft(projected, 1), 1, map);
  ad::Var prior = ad::instance_norm(token_inr_.forward(tape, state.tau), 0);
  state.tokens = ad::rfft(prior, 0);
  state.spectrum = ad::add(extended, state.tokens);
  state.z0 = ad::irfft(state.spectrum, 1, map.n_out);
  return state;
}

ad::Var NfmModel::inff(ad::Tape& tape, ad::Var z, const EmbeddingState& state, std::size_t block, ad::Var* filter) const {
  if (z.shape() != state.z0.shape()) {
    throw Error("inff: input " + ad::to_string(z.shape()) + " does not match embedding " + ad::to_string(state.z0.shape()));
  }
  if (block >= block_inrs_.size()) throw Error("inff: block index out of range");
  const std::string prefix = block_name(block, config_.blocks) + ".inff.";
  ad::Var cond = ad::instance_norm(ad::add(state.z0, block_inrs_[block].forward(tape, state.tau)), 1);
  // energy-preserving scale, so the MLP input does not grow with L
  const ad::Var spec = ad::scale(ad::rfft(cond, 1), 1.0 / std::sqrt(static_cast<double>(state.length)));
  const ad::Var hidden = ad::relu(ad::complex_linear(spec, param(tape, prefix + "w1"), param(tape, prefix + "b1")));
  const ad::Var r = ad::complex_linear(hidden, param(tape, prefix + "w2"), param(tape, prefix + "b2"));
  if (filter != nullptr) *filter = r;
  return ad::irfft(ad::complex_mul(r, ad::rfft(z, 1)), 1, state.length);
}

ad::Var NfmModel::channel_mlp(ad::Tape& tape, ad::Var z, std::size_t block, const ForwardContext& ctx) const {
  const std::string prefix = block_name(block, config_.blocks) + ".mlp.";
  ad::Var h = ad::relu(ad::linear(z, param(tape, prefix + "w1"), param(tape, prefix + "b1")));
  if (ctx.training && config_.dropout > 0.0) h = ad::dropout(h, config_.dropout, *ctx.rng, true);
  return ad::linear(h, param(tape, prefix + "w2"), param(tape, prefix + "b2"));
}

ad::Var NfmModel::mixer_block(ad::Tape& tape, ad::Var z, const EmbeddingState& state, std::size_t block,
                              const ForwardContext& ctx, ad::Var* filter) const {
  const std::string prefix = block_name(block, config_.blocks) + ".norm.";
  ad::Var mixed = inff(tape, channel_mlp(tape, z, block, ctx), state, block, filter);
  return ad::layer_norm(ad::add(z, mixed), param(tape, prefix + "gain"), param(tape, prefix + "shift"));
}

ad::Var NfmModel::final_block(ad::Tape& tape, ad::Var z, const ForwardContext& ctx) const {
  ad::Var mixed = channel_mlp(tape, z, config_.blocks, ctx);
  return ad::layer_norm(ad::add(z, mixed), param(tape, "final.norm.gain"), param(tape, "final.norm.shift"));
}

ad::Var NfmModel::backbone(ad::Tape& tape, ad::Var x, const ExtensionFactors& factors, const ForwardContext& ctx,
                           std::vector<ad::Var>* filters) const {
  const EmbeddingState state = lft(tape, input_projection(tape, x, ctx), factors);
  ad::Var z = state.z0;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    ad::Var r;
    z = mixer_block(tape, z, state, b, ctx, &r);
    if (filters != nullptr) filters->push_back(r);
  }
  return final_block(tape, z, ctx);
}

ad::Var NfmModel::head(ad::Tape& tape, ad::Var z) const {
  ad::Var w = param(tape, "head.w");
  ad::Var b = param(tape, "head.b");
  if (config_.head == HeadKind::Pooled) return ad::linear(ad::mean_axis(z, 1), w, b);
  return ad::linear(z, w, b);
}

ad::Var NfmModel::forward(ad::Tape& tape, ad::Var x, const ExtensionFactors& factors, const ForwardContext& ctx) const {
  return head(tape, backbone(tape, x, factors, ctx));
}

std::size_t param_count(const ModelConfig& config) {
  const NfmModel model(config, 0);
  return model.param_count();
}

}  // namespace nfm
