#include "moss/hostd/images.hpp"

#include "moss/core/errors.hpp"

namespace moss::hostd {

using nlohmann::json;

json ImageRecord::to_json() const {
    json doc = ref.to_json();
    doc["tags"] = tags;
    if (!behavior.is_null()) doc["behavior"] = behavior;
    return doc;
}

ImageRecord ImageRecord::from_json(const json& doc) {
    ImageRecord r;
    r.ref = ImageRef::from_json(doc);
    if (doc.contains("tags")) r.tags = doc["tags"].get<std::vector<std::string>>();
    if (doc.contains("behavior")) r.behavior = doc["behavior"];
    return r;
}

ImageRegistry::ImageRegistry(StateStore& store) : store_(store) {}

json ImageRegistry::load() const {
    auto doc = store_.read_doc("images/registry.json");
    return doc ? *doc : json{{"version", 1}, {"images", json::object()}};
}

void ImageRegistry::save(const json& doc) const { store_.write_doc("images/registry.json", doc); }

void ImageRegistry::put(const ImageRecord& record) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    doc["images"][record.ref.image_id] = record.to_json();
    save(doc);
}

std::optional<ImageRecord> ImageRegistry::get(const std::string& image_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    if (!doc["images"].contains(image_id)) return std::nullopt;
    return ImageRecord::from_json(doc["images"][image_id]);
}

bool ImageRegistry::exists(const std::string& image_id) const { return get(image_id).has_value(); }

void ImageRegistry::tag(const std::string& image_id, const std::string& tag) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    if (!doc["images"].contains(image_id))
        throw Error(ErrorCode::unknown_image, "cannot tag unknown image " + image_id);
    auto record = ImageRecord::from_json(doc["images"][image_id]);
    record.tags.push_back(tag);
    doc["images"][image_id] = record.to_json();
    save(doc);
}

std::vector<ImageRecord> ImageRegistry::all() const {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    std::vector<ImageRecord> out;
    for (const auto& [_, img] : doc["images"].items()) out.push_back(ImageRecord::from_json(img));
    return out;
}

SimulatedImageBuilder::SimulatedImageBuilder(ImageRegistry& registry) : registry_(registry) {}

ImageRef SimulatedImageBuilder::build(const std::filesystem::path& workspace_path,
                                      const std::string& rev) {
    GitWorkspace ws = GitWorkspace::open(workspace_path);

    if (ws.file_at(rev, "build_fail.marker"))
        throw Error(ErrorCode::build_failed, "builder exited nonzero for rev " + rev);

    ImageRecord record;
    record.ref.image_id = "img-" + ws.tree_hash(rev);
    record.ref.built_from_rev = rev;
    record.ref.built_at = Timestamp::now();
    if (auto behavior = ws.file_at(rev, "agent_behavior.json")) {
        auto parsed = nlohmann::json::parse(*behavior, nullptr, false);
        if (parsed.is_discarded())
            throw Error(ErrorCode::build_failed, "agent_behavior.json unparseable at rev " + rev);
        record.behavior = parsed;
    }
    registry_.put(record);
    return record.ref;
}

} // namespace moss::hostd
