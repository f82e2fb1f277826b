#pragma once

#include "moss/core/domain.hpp"
#include "moss/core/store.hpp"
#include "moss/core/workspace.hpp"

#include <mutex>
#include <optional>
#include <vector>

namespace moss::hostd {

struct ImageRecord {
    ImageRef ref;
    std::vector<std::string> tags;
    nlohmann::json behavior; // simulated substrate behavior captured at build

    nlohmann::json to_json() const;
    static ImageRecord from_json(const nlohmann::json& doc);
};

// images/registry.json: image_id -> {built_from_rev, built_at, tags, behavior}.
class ImageRegistry {
public:
    explicit ImageRegistry(StateStore& store);

    void put(const ImageRecord& record);
    std::optional<ImageRecord> get(const std::string& image_id) const;
    bool exists(const std::string& image_id) const;
    void tag(const std::string& image_id, const std::string& tag); // throws unknown_image
    std::vector<ImageRecord> all() const;

private:
    nlohmann::json load() const;
    void save(const nlohmann::json& doc) const;

    StateStore& store_;
    mutable std::mutex mu_;
};

class ImageBuilder {
public:
    virtual ~ImageBuilder() = default;
    // Builds rev into an image and records it; throws build_failed.
    virtual ImageRef build(const std::filesystem::path& workspace_path, const std::string& rev) = 0;
};

// Deterministic builder: image_id is the content hash of the tree at rev, so
// rebuilding a rev yields the same id. The file `agent_behavior.json` at rev,
// when present, is captured into the record as the image's scripted behavior;
// a `build_fail.marker` file at rev makes the build exit nonzero.
class SimulatedImageBuilder final : public ImageBuilder {
public:
    explicit SimulatedImageBuilder(ImageRegistry& registry);
    ImageRef build(const std::filesystem::path& workspace_path, const std::string& rev) override;

private:
    ImageRegistry& registry_;
};

} // namespace moss::hostd
