#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cosmo/core.hpp"
#include "cosmo/data.hpp"
#include "cosmo/encoders.hpp"

namespace cosmo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;
inline constexpr const char* kToolVersion = "0.1.0";

/// Entry point used by the binary; args excludes argv[0]. Returns the process
/// exit code: 0 on success, 2 for validation/usage failures, 1 for runtime
/// failures.
int run_cli(const std::vector<std::string>& args);

/// Reads a training config file. The pseudo-label thresholds (kappa_lower,
/// kappa_upper, kappa_known) must be present explicitly so every experiment
/// records them; all other keys fall back to their defaults.
TrainConfig load_config_file(const std::filesystem::path& path);

/// Builds a backend from its tag: "toy" (feature_dim from the data, token_dim
/// equal to it, seeded by the split) or "clip:<converted checkpoint dir>".
encoders::Backend<float> make_backend(const std::string& tag, int data_feature_dim,
                                      std::uint64_t data_seed);

/// Token-space construction of the synthetic task. Every cluster mean is the
/// text feature of (class token + context offset + per-domain offset), so a
/// learnable context can align the known classes, a separate context is
/// needed for the unknown region, and the per-domain offsets are exactly the
/// kind of translation a bias token can supply.
struct SyntheticGeometryParams {
  double context_offset = 0.4;   // shared offset the known context must learn
  double unknown_offset = 1.0;   // offset of the unknown region (unknown context target)
  double domain_offset = 0.8;    // per-target-domain token-space shift, in class-token span
  double unknown_spread = 0.7;   // spread of the individual unknown clusters
};

data::SyntheticGeometry synthetic_geometry(const encoders::Backend<float>& backend,
                                           const std::vector<std::string>& known_classes,
                                           const std::vector<std::string>& unknown_classes,
                                           const std::vector<std::string>& domains,
                                           std::uint64_t seed,
                                           const SyntheticGeometryParams& params = {});

}  // namespace cosmo::cli
