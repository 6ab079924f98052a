#pragma once

#include <string>

#include "changediff/model.hpp"

namespace changediff {

// Self-describing container: version-tagged JSON header (model config,
// schedule parameters, tokenizer id, class names, parameter manifest)
// followed by raw little-endian double blobs. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace changediff
