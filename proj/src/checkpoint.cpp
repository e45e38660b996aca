#include "afpa/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "afpa/error.hpp"
#include "afpa/tensor_file.hpp"

namespace afpa {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, const model::AsdModel& model, const RunConfig& config) {
    if (model.cfg.use_afpa != config.use_afpa()) throw ContractError("save_checkpoint: model and config disagree on use_afpa");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    TensorMap tensors;
    for (const auto& p : model.all_tensors()) tensors[p.name] = ArrayF32::from_tensor(p.tensor);
    tensor_write(dir / "params.aft", tensors);

    json classes = json::array();
    for (const auto& c : model.classes) {
        classes.push_back({{"index", c.class_index}, {"machine_type", c.machine_type}, {"machine_id", c.machine_id}});
    }
    const json manifest = {
        {"version", kCheckpointVersion},
        {"use_afpa", model.cfg.use_afpa},
        {"classes", classes},
        {"config_hash", config_hash(config)},
        {"config", render_config(config)},
        {"tensors", "params.aft"},
    };
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint manifest " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": malformed manifest: " + e.what());
    }

    Checkpoint ck;
    std::vector<model::IdLabel> classes;
    bool use_afpa = true;
    try {
        const int version = manifest.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw VersionError(manifest_path.string() + ": unsupported checkpoint version " + std::to_string(version));
        }
        use_afpa = manifest.at("use_afpa").get<bool>();
        ck.config = parse_config(manifest.at("config").get<std::string>());
        ck.config_hash = manifest.at("config_hash").get<std::string>();
        for (const auto& c : manifest.at("classes")) {
            classes.push_back({c.at("machine_type").get<std::string>(), c.at("machine_id").get<std::string>(),
                               c.at("index").get<std::size_t>()});
        }
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(manifest_path.string() + ": bad embedded config: " + e.what());
    }
    if (use_afpa != ck.config.use_afpa()) throw FormatError(manifest_path.string() + ": use_afpa disagrees with config");
    ck.config.finalize();
    if (config_hash(ck.config) != ck.config_hash) {
        throw CorruptionError(manifest_path.string() + ": config hash does not match the embedded config");
    }

    try {
        ck.model = model::AsdModel::init(ck.config.pipeline, classes, 0);
    } catch (const ContractError& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    const auto tensors = tensor_read(dir / "params.aft");
    auto params = ck.model.all_tensors();
    if (tensors.size() != params.size()) {
        throw FormatError(dir.string() + ": checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    }
    for (auto& p : params) {
        const auto it = tensors.find(p.name);
        if (it == tensors.end()) throw FormatError(dir.string() + ": checkpoint lacks tensor " + p.name);
        if (it->second.shape() != p.tensor.shape()) {
            throw FormatError(dir.string() + ": tensor " + p.name + " has shape " + shape_str(it->second.shape()) +
                              ", model expects " + shape_str(p.tensor.shape()));
        }
        auto values = p.tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = it->second.values[i];
    }
    return ck;
}

}  // namespace afpa
