#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "magn/model.hpp"
#include "magn/trainer.hpp"

namespace magn {

inline constexpr const char* kCheckpointMagic = "MAGN1";

/// On-disk model container. Layout:
///   MAGN1\n
///   config <n>\n            followed by n "key=value" lines
///   manifest <m>\n          followed by m "name shape offset" lines
///   data <k>\n              followed by k raw little-endian float32 values
///   opt <j>\n               followed by j raw float32 values (Adam m then v
///                           in manifest order; j is 0 when no optimizer
///                           state is stored)
struct CheckpointData {
    std::map<std::string, std::string> config;
    std::vector<std::pair<std::string, Shape>> manifest;
    std::vector<float> params; // manifest order
    std::vector<float> opt;    // empty or 2x params (m then v)
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Pack/unpack between the in-memory model and the container.
// ---------------------------------------------------------------------------

template <class T>
CheckpointData pack_checkpoint(const std::map<std::string, std::string>& config,
                               const ModelParamsT<TensorT<T>>& params,
                               const OptimizerStateT<T>* state = nullptr) {
    CheckpointData d;
    d.config = config;
    int64_t offset = 0;
    for_each_param(params, [&](const std::string& name, const TensorT<T>& t) {
        d.manifest.emplace_back(name, t.shape);
        for (int64_t i = 0; i < t.size(); ++i) d.params.push_back(static_cast<float>(t[i]));
        offset += t.size();
    });
    if (state) {
        d.config["step"] = std::to_string(state->step);
        for (const auto& m : state->m)
            for (int64_t i = 0; i < m.size(); ++i) d.opt.push_back(static_cast<float>(m[i]));
        for (const auto& v : state->v)
            for (int64_t i = 0; i < v.size(); ++i) d.opt.push_back(static_cast<float>(v[i]));
    }
    return d;
}

/// Fills `params` (shapes must match the manifest) and optionally the
/// optimizer state; returns the stored step counter (0 if none).
template <class T>
int64_t unpack_checkpoint(const CheckpointData& d, ModelParamsT<TensorT<T>>& params,
                          OptimizerStateT<T>* state = nullptr) {
    size_t entry = 0;
    size_t pos = 0;
    for_each_param(params, [&](const std::string& name, TensorT<T>& t) {
        if (entry >= d.manifest.size())
            throw DataError("checkpoint: manifest ends before parameter " + name);
        const auto& [mname, mshape] = d.manifest[entry++];
        if (mname != name || mshape != t.shape)
            throw DataError("checkpoint: manifest entry '" + mname + "' " + shape_str(mshape) +
                            " does not match parameter '" + name + "' " + shape_str(t.shape));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d.params[pos++]);
    });
    if (entry != d.manifest.size())
        throw DataError("checkpoint: manifest has " + std::to_string(d.manifest.size()) +
                        " entries, model expects " + std::to_string(entry));
    int64_t step = 0;
    if (auto it = d.config.find("step"); it != d.config.end()) step = std::stoll(it->second);
    if (state) {
        *state = make_optimizer_state(params);
        state->step = step;
        if (!d.opt.empty()) {
            if (d.opt.size() != 2 * d.params.size())
                throw DataError("checkpoint: optimizer blob size mismatch");
            size_t p = 0;
            for (auto& m : state->m)
                for (int64_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(d.opt[p++]);
            for (auto& v : state->v)
                for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(d.opt[p++]);
        }
    }
    return step;
}

} // namespace magn
