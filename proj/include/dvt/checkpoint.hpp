#pragma once

#include <filesystem>
#include <string>

#include "dvt/model.hpp"

namespace dvt {

// JSON checkpoint layout (format "dvt-checkpoint", version 1):
//
//   {
//     "format": "dvt-checkpoint", "version": 1,
//     "classes": K,
//     "arch": {"shared_hidden": [...], "adapter_width": n, "latent_dim": J,
//              "shared_classifier": bool, "mu_scale": x, "sigma": x,
//              "class_weights": [...]},
//     "domains": [{"id": "...", "input_dim": D, "likelihood": "gaussian"}],
//     "prior": {"pi": [...], "means": {"shape": [K, J], "values": [...]}, "sigma": x},
//     "seed_lineage": [seed, ...],
//     "layers": {"shared": [L...], "domains": [{"adapter": [L...], "head": L,
//                "classifier": [L...], "decoder": [L...]}], "classifier": [L...]}
//   }
//
// where L = {"activation": "relu"|"none", "weight": T, "bias": T} and
// T = {"shape": [...], "values": [...]} with row-major values. Doubles are
// written in shortest round-trip form, so save/load is bit-exact.
std::string checkpoint_to_json(const DvtModel& model);
DvtModel checkpoint_from_json(const std::string& text);

void save_checkpoint(const DvtModel& model, const std::filesystem::path& path);
DvtModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dvt
