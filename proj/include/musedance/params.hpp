// Tagged parameter storage and the checkpoint archive.
#pragma once

#include "musedance/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace musedance {

using ad::Matrix;
using ad::Var;

/// Block kind every parameter is tagged with. Freezing and checkpointing
/// operate on whole groups.
enum class ParamGroup {
    conv,
    spatial_attention,
    text_cross_attention,
    time_embedding,
    temporal_music,
    temporal_beat,
    temporal_motion,
    reference_net,
    mask_encoder,
    text_encoder,
    music_encoder,
};

inline constexpr ParamGroup kAllGroups[] = {
    ParamGroup::conv,           ParamGroup::spatial_attention, ParamGroup::text_cross_attention,
    ParamGroup::time_embedding, ParamGroup::temporal_music,    ParamGroup::temporal_beat,
    ParamGroup::temporal_motion, ParamGroup::reference_net,    ParamGroup::mask_encoder,
    ParamGroup::text_encoder,   ParamGroup::music_encoder,
};

std::string_view group_name(ParamGroup group);
std::optional<ParamGroup> parse_group(std::string_view name);
bool is_temporal_group(ParamGroup group);

enum class Init { zeros, ones, uniform_fan_in, normal_small };

template <typename T>
struct Param {
    std::string name;
    ParamGroup group;
    Var<T> var;
};

template <typename T>
class ParamStore {
  public:
    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    /// Registers a new parameter. Names must be unique.
    Var<T> create(const std::string& name, ParamGroup group, int rows, int cols, Init init,
                  int fan_in = 0);

    const std::vector<Param<T>>& params() const { return params_; }
    std::vector<Param<T>>& params() { return params_; }
    std::vector<const Param<T>*> group(ParamGroup g) const;
    bool has_group(ParamGroup g) const;
    const Param<T>* find(const std::string& name) const;

    void set_trainable(ParamGroup g, bool trainable);
    void set_all_trainable(bool trainable);
    void zero_grad();
    std::size_t count(ParamGroup g) const;

    /// FNV-1a over names, shapes and the float32 bytes of every parameter in the group.
    std::uint64_t group_hash(ParamGroup g) const;

    /// Copies values from another store with the same parameter names.
    template <typename U>
    void copy_values_from(const ParamStore<U>& other);

  private:
    std::vector<Param<T>> params_;
    std::mt19937_64 rng_;
};

/// Parsed checkpoint contents: float32 payload per group plus the topology JSON.
struct CheckpointArchive {
    std::uint32_t format_version = 1;
    std::string topology_json;
    struct Group {
        std::string name;
        std::vector<float> values;
    };
    std::vector<Group> groups;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Topology descriptor: model-level JSON merged with per-group parameter lists.
template <typename T>
std::string describe_topology(const ParamStore<T>& store, const std::string& model_json);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store,
                     const std::string& model_json);

CheckpointArchive read_checkpoint(const std::filesystem::path& path);

/// Loads every group present in the archive into the store. Groups the store
/// has but the archive lacks must be listed in `may_be_missing`. Throws
/// std::runtime_error on any topology incompatibility.
template <typename T>
void load_checkpoint(const CheckpointArchive& archive, ParamStore<T>& store,
                     const std::string& model_json, const std::set<ParamGroup>& may_be_missing = {});

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t value);

template <typename T>
template <typename U>
void ParamStore<T>::copy_values_from(const ParamStore<U>& other) {
    for (auto& p : params_) {
        const Param<U>* src = other.find(p.name);
        if (src == nullptr) continue;
        p.var->value = src->var->value.template cast<T>();
    }
}

}  // namespace musedance
