#include "musedance/params.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace musedance {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'U', 'S', 'E', 'D', 'C', 'K', 'P'};

struct GroupInfo {
    ParamGroup group;
    std::string_view name;
};

constexpr GroupInfo kGroupNames[] = {
    {ParamGroup::conv, "conv"},
    {ParamGroup::spatial_attention, "spatial_attention"},
    {ParamGroup::text_cross_attention, "text_cross_attention"},
    {ParamGroup::time_embedding, "time_embedding"},
    {ParamGroup::temporal_music, "temporal_music"},
    {ParamGroup::temporal_beat, "temporal_beat"},
    {ParamGroup::temporal_motion, "temporal_motion"},
    {ParamGroup::reference_net, "reference_net"},
    {ParamGroup::mask_encoder, "mask_encoder"},
    {ParamGroup::text_encoder, "text_encoder"},
    {ParamGroup::music_encoder, "music_encoder"},
};

template <typename V>
void write_pod(std::ostream& out, V value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in, const std::filesystem::path& path) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(V));
    if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
    return value;
}

template <typename T>
nlohmann::json group_layout(const ParamStore<T>& store, ParamGroup g) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto* p : store.group(g)) {
        list.push_back({p->name, p->var->value.rows(), p->var->value.cols()});
    }
    return list;
}

}  // namespace

std::string_view group_name(ParamGroup group) {
    for (const auto& info : kGroupNames) {
        if (info.group == group) return info.name;
    }
    return "unknown";
}

std::optional<ParamGroup> parse_group(std::string_view name) {
    for (const auto& info : kGroupNames) {
        if (info.name == name) return info.group;
    }
    return std::nullopt;
}

bool is_temporal_group(ParamGroup group) {
    return group == ParamGroup::temporal_music || group == ParamGroup::temporal_beat ||
           group == ParamGroup::temporal_motion;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << value;
    return os.str();
}

template <typename T>
Var<T> ParamStore<T>::create(const std::string& name, ParamGroup group, int rows, int cols, Init init,
                             int fan_in) {
    if (find(name) != nullptr) throw std::logic_error("duplicate parameter name: " + name);
    Matrix<T> value(rows, cols);
    switch (init) {
        case Init::zeros:
            value.setZero();
            break;
        case Init::ones:
            value.setOnes();
            break;
        case Init::uniform_fan_in: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : rows));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = T(dist(rng_));
            break;
        }
        case Init::normal_small: {
            std::normal_distribution<double> dist(0.0, 0.02);
            for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = T(dist(rng_));
            break;
        }
    }
    auto var = ad::leaf<T>(std::move(value), true);
    params_.push_back({name, group, var});
    return var;
}

template <typename T>
std::vector<const Param<T>*> ParamStore<T>::group(ParamGroup g) const {
    std::vector<const Param<T>*> out;
    for (const auto& p : params_) {
        if (p.group == g) out.push_back(&p);
    }
    return out;
}

template <typename T>
bool ParamStore<T>::has_group(ParamGroup g) const {
    for (const auto& p : params_) {
        if (p.group == g) return true;
    }
    return false;
}

template <typename T>
const Param<T>* ParamStore<T>::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

template <typename T>
void ParamStore<T>::set_trainable(ParamGroup g, bool trainable) {
    for (auto& p : params_) {
        if (p.group == g) p.var->requires_grad = trainable;
    }
}

template <typename T>
void ParamStore<T>::set_all_trainable(bool trainable) {
    for (auto& p : params_) p.var->requires_grad = trainable;
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& p : params_) p.var->grad.resize(0, 0);
}

template <typename T>
std::size_t ParamStore<T>::count(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.group == g) n += static_cast<std::size_t>(p.var->value.size());
    }
    return n;
}

template <typename T>
std::uint64_t ParamStore<T>::group_hash(ParamGroup g) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto* p : group(g)) {
        h = fnv1a(p->name.data(), p->name.size(), h);
        const std::int64_t dims[2] = {p->var->value.rows(), p->var->value.cols()};
        h = fnv1a(dims, sizeof(dims), h);
        std::vector<float> values(static_cast<std::size_t>(p->var->value.size()));
        for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(p->var->value.data()[i]);
        h = fnv1a(values.data(), values.size() * sizeof(float), h);
    }
    return h;
}

template <typename T>
std::string describe_topology(const ParamStore<T>& store, const std::string& model_json) {
    nlohmann::json topo;
    topo["model"] = nlohmann::json::parse(model_json);
    nlohmann::json groups = nlohmann::json::object();
    for (ParamGroup g : kAllGroups) {
        if (store.has_group(g)) groups[std::string(group_name(g))] = group_layout(store, g);
    }
    topo["groups"] = groups;
    return topo.dump();
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store,
                     const std::string& model_json) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kCheckpointVersion);
    const std::string topo = describe_topology(store, model_json);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(topo.size()));
    out.write(topo.data(), static_cast<std::streamsize>(topo.size()));

    std::uint32_t group_count = 0;
    for (ParamGroup g : kAllGroups) group_count += store.has_group(g) ? 1 : 0;
    write_pod<std::uint32_t>(out, group_count);
    for (ParamGroup g : kAllGroups) {
        if (!store.has_group(g)) continue;
        const std::string_view name = group_name(g);
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        std::vector<float> values;
        values.reserve(store.count(g));
        for (const auto* p : store.group(g)) {
            for (Eigen::Index i = 0; i < p->var->value.size(); ++i) {
                values.push_back(static_cast<float>(p->var->value.data()[i]));
            }
        }
        write_pod<std::uint64_t>(out, values.size() * sizeof(float));
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

CheckpointArchive read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a checkpoint archive: " + path.string());
    }
    CheckpointArchive archive;
    archive.format_version = read_pod<std::uint32_t>(in, path);
    if (archive.format_version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(archive.format_version));
    }
    const auto topo_len = read_pod<std::uint32_t>(in, path);
    archive.topology_json.resize(topo_len);
    in.read(archive.topology_json.data(), topo_len);
    const auto group_count = read_pod<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < group_count; ++i) {
        CheckpointArchive::Group group;
        const auto name_len = read_pod<std::uint32_t>(in, path);
        group.name.resize(name_len);
        in.read(group.name.data(), name_len);
        const auto bytes = read_pod<std::uint64_t>(in, path);
        if (bytes % sizeof(float) != 0) throw std::runtime_error("corrupt group size in " + path.string());
        group.values.resize(bytes / sizeof(float));
        in.read(reinterpret_cast<char*>(group.values.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw std::runtime_error("checkpoint truncated: " + path.string());
        archive.groups.push_back(std::move(group));
    }
    return archive;
}

template <typename T>
void load_checkpoint(const CheckpointArchive& archive, ParamStore<T>& store,
                     const std::string& model_json, const std::set<ParamGroup>& may_be_missing) {
    nlohmann::json topo;
    try {
        topo = nlohmann::json::parse(archive.topology_json);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint topology is not valid JSON: ") + e.what());
    }
    if (topo.value("model", nlohmann::json()) != nlohmann::json::parse(model_json)) {
        throw std::runtime_error("checkpoint topology mismatch: model configuration differs");
    }
    std::set<ParamGroup> loaded;
    for (const auto& group : archive.groups) {
        const auto g = parse_group(group.name);
        if (!g) throw std::runtime_error("checkpoint has unknown parameter group " + group.name);
        if (!store.has_group(*g)) {
            throw std::runtime_error("checkpoint group " + group.name + " does not exist in this model");
        }
        if (topo["groups"].value(group.name, nlohmann::json()) != group_layout(store, *g)) {
            throw std::runtime_error("checkpoint topology mismatch in group " + group.name);
        }
        if (group.values.size() != store.count(*g)) {
            throw std::runtime_error("checkpoint group " + group.name + " has wrong byte count");
        }
        std::size_t offset = 0;
        for (auto& p : store.params()) {
            if (p.group != *g) continue;
            for (Eigen::Index i = 0; i < p.var->value.size(); ++i) {
                p.var->value.data()[i] = static_cast<T>(group.values[offset++]);
            }
        }
        loaded.insert(*g);
    }
    for (ParamGroup g : kAllGroups) {
        if (store.has_group(g) && !loaded.count(g) && !may_be_missing.count(g)) {
            throw std::runtime_error("checkpoint lacks required parameter group " + std::string(group_name(g)));
        }
    }
}

template class ParamStore<float>;
template class ParamStore<double>;
template std::string describe_topology<float>(const ParamStore<float>&, const std::string&);
template std::string describe_topology<double>(const ParamStore<double>&, const std::string&);
template void save_checkpoint<float>(const std::filesystem::path&, const ParamStore<float>&, const std::string&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamStore<double>&, const std::string&);
template void load_checkpoint<float>(const CheckpointArchive&, ParamStore<float>&, const std::string&,
                                     const std::set<ParamGroup>&);
template void load_checkpoint<double>(const CheckpointArchive&, ParamStore<double>&, const std::string&,
                                      const std::set<ParamGroup>&);

}  // namespace musedance
