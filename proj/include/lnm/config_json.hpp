#pragma once

// Strict JSON conversions for every configuration type. Missing fields keep their
// defaults; unknown fields and wrongly typed values raise ConfigError naming the field.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "lnm/corpus.hpp"
#include "lnm/mil.hpp"
#include "lnm/morphometry.hpp"
#include "lnm/preprocess.hpp"
#include "lnm/vae.hpp"

namespace lnm {

void to_json(nlohmann::json& j, const VoxelSpacing& v);
void from_json(const nlohmann::json& j, VoxelSpacing& v);
void to_json(nlohmann::json& j, const NodeDesign& v);
void from_json(const nlohmann::json& j, NodeDesign& v);
void to_json(nlohmann::json& j, const PhantomSpec& v);
void from_json(const nlohmann::json& j, PhantomSpec& v);

namespace preprocess {
void to_json(nlohmann::json& j, const Range& v);
void from_json(const nlohmann::json& j, Range& v);
void to_json(nlohmann::json& j, const AugmentationConfig& v);
void from_json(const nlohmann::json& j, AugmentationConfig& v);
}  // namespace preprocess

namespace vae {
void to_json(nlohmann::json& j, const VAEConfig& v);
void from_json(const nlohmann::json& j, VAEConfig& v);
void to_json(nlohmann::json& j, const LossWeights& v);
void from_json(const nlohmann::json& j, LossWeights& v);
}  // namespace vae

namespace mil {
void to_json(nlohmann::json& j, const FeatureSwitches& v);
void from_json(const nlohmann::json& j, FeatureSwitches& v);
void to_json(nlohmann::json& j, const MILConfig& v);
void from_json(const nlohmann::json& j, MILConfig& v);
}  // namespace mil

namespace config {

/// Configuration error attributed to a dotted field path.
class FieldError : public ConfigError {
 public:
    FieldError(std::string field, std::string reason)
        : ConfigError("invalid config field '" + field + "': " + reason),
          field_(std::move(field)),
          reason_(std::move(reason)) {}
    const std::string& field() const noexcept { return field_; }
    const std::string& reason() const noexcept { return reason_; }

 private:
    std::string field_;
    std::string reason_;
};

/// Reads the fields of one JSON object, remembering which keys were consumed.
class FieldReader {
 public:
    explicit FieldReader(const nlohmann::json& object);

    template <typename T>
    void optional(const char* key, T& out) {
        auto it = object_.find(key);
        if (it == object_.end()) return;
        seen_.push_back(key);
        try {
            out = it->template get<T>();
        } catch (const FieldError& e) {
            throw FieldError(std::string(key) + "." + e.field(), e.reason());
        } catch (const ConfigError& e) {
            throw FieldError(key, e.what());
        } catch (const nlohmann::json::exception&) {
            throw FieldError(key, "wrong type");
        }
    }

    bool has(const char* key) const { return object_.contains(key); }
    /// Throws on any key that was never read.
    void finish() const;

 private:
    const nlohmann::json& object_;
    std::vector<std::string> seen_;
};

/// Parses a file, mapping syntax errors to ConfigError.
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace config
}  // namespace lnm
