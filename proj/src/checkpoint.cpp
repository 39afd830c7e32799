#include "lidkit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace lidkit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");
static_assert(sizeof(float) == 4, "checkpoint arrays are 32-bit floats");

namespace {
constexpr int kFormatVersion = 1;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["meta"] = data.meta;
    header["arrays"] = nlohmann::json::array();
    u64 offset = 0;
    for (const auto& name : data.order) {
        const auto& t = data.get(name);
        header["arrays"].push_back({{"name", name},
                                    {"rows", t.rows},
                                    {"cols", t.cols},
                                    {"dtype", "f32"},
                                    {"offset", offset}});
        offset += t.data.size() * sizeof(float);
    }
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    LID_CHECK(out.good(), "cannot open ", path, " for writing");
    const u64 hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& name : data.order) {
        const auto& t = data.get(name);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    out.flush();
    LID_CHECK(out.good(), "write failed for ", path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    LID_CHECK(in.good(), "cannot open checkpoint ", path);
    u64 hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    LID_CHECK(in.gcount() == sizeof(hlen), path, ": truncated header length");
    LID_CHECK(hlen > 0 && hlen < (1u << 26), path, ": implausible header length ", hlen);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    LID_CHECK(in.gcount() == static_cast<std::streamsize>(hlen), path, ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::parse_error& e) {
        LID_FAIL(path, ": bad checkpoint header: ", e.what());
    }
    LID_CHECK(header.value("format_version", -1) == kFormatVersion, path,
              ": unsupported format version");
    LID_CHECK(header.contains("arrays") && header["arrays"].is_array(), path,
              ": header lists no arrays");

    CheckpointData data;
    data.meta = header.value("meta", nlohmann::json::object());
    u64 expect_offset = 0;
    for (const auto& a : header["arrays"]) {
        LID_CHECK(a.contains("name") && a.contains("rows") && a.contains("cols") &&
                      a.contains("offset"),
                  path, ": malformed array entry");
        LID_CHECK(a.value("dtype", "") == "f32", path, ": array ",
                  a.value("name", "?"), " has unsupported dtype");
        const std::string name = a["name"].get<std::string>();
        const i64 rows = a["rows"].get<i64>();
        const i64 cols = a["cols"].get<i64>();
        LID_CHECK(rows > 0 && cols > 0, path, ": array ", name, " has bad shape");
        LID_CHECK(a["offset"].get<u64>() == expect_offset, path, ": array ", name,
                  " offset mismatch");
        Tensor<float>& t = data.add(name, Tensor<float>(rows, cols));
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        LID_CHECK(in.gcount() == static_cast<std::streamsize>(t.data.size() * sizeof(float)),
                  path, ": truncated body at array ", name);
        expect_offset += t.data.size() * sizeof(float);
    }
    char extra = 0;
    in.read(&extra, 1);
    LID_CHECK(in.eof(), path, ": trailing bytes after last array");
    return data;
}

} // namespace lidkit
