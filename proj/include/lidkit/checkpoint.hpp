#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lidkit/common.hpp"
#include "lidkit/tensor.hpp"

namespace lidkit {

// On-disk model state. File layout: an 8-byte little-endian length, a UTF-8
// JSON header of that length, then the array bodies as little-endian 32-bit
// floats, concatenated in header order. The header records the format
// version, caller metadata (config echo, step counter, languages), and each
// array's name, shape, dtype, and byte offset into the body.
struct CheckpointData {
    nlohmann::json meta;
    std::vector<std::string> order;
    std::unordered_map<std::string, Tensor<float>> arrays;

    Tensor<float>& add(const std::string& name, Tensor<float> t) {
        LID_CHECK(arrays.find(name) == arrays.end(), "duplicate checkpoint array ", name);
        order.push_back(name);
        return arrays.emplace(name, std::move(t)).first->second;
    }

    const Tensor<float>& get(const std::string& name) const {
        auto it = arrays.find(name);
        LID_CHECK(it != arrays.end(), "checkpoint is missing array ", name);
        return it->second;
    }

    bool has(const std::string& name) const { return arrays.find(name) != arrays.end(); }
};

void save_checkpoint(const std::string& path, const CheckpointData& data);

CheckpointData load_checkpoint(const std::string& path);

} // namespace lidkit
