#pragma once

#include "nlid/hw.hpp"
#include "nlid/neural_ss.hpp"
#include "nlid/nlarx.hpp"

#include <filesystem>
#include <string>
#include <variant>

namespace nlid {

inline constexpr int kModelFormatVersion = 1;

using AnyModel = std::variant<NeuralStateSpaceModel, NlarxModel, HwModel>;

/// "neural_ss", "nlarx" or "hw".
std::string model_kind(const AnyModel& model);

// JSON model documents: {"format": "nlid-model", "version", "kind", ...}.
// Keys are sorted and doubles are written in shortest round-trip form, so
// save -> load -> save is byte-identical.
std::string to_document(const AnyModel& model);
/// Throws DataError on malformed JSON, a wrong format tag, an unsupported
/// version, an unknown kind or inconsistent shapes.
AnyModel parse_document(const std::string& text);

void save_model(const AnyModel& model, const std::filesystem::path& path);
AnyModel load_model(const std::filesystem::path& path);

}  // namespace nlid
