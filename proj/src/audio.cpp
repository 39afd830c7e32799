#include "lidkit/audio.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

namespace lidkit {

namespace {

template <class T>
T read_le(std::ifstream& f, const std::string& path, const char* what) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    LID_CHECK(f.good(), path, ": truncated while reading ", what);
    return v;
}

std::string read_tag(std::ifstream& f, const std::string& path, const char* what) {
    char tag[4];
    f.read(tag, 4);
    LID_CHECK(f.good(), path, ": truncated while reading ", what);
    return std::string(tag, 4);
}

} // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    LID_CHECK(f.is_open(), path, ": cannot open");

    LID_CHECK(read_tag(f, path, "RIFF header") == "RIFF", path, ": not a RIFF file");
    read_le<std::uint32_t>(f, path, "RIFF size");
    LID_CHECK(read_tag(f, path, "WAVE tag") == "WAVE", path, ": not a WAVE file");

    bool have_fmt = false;
    std::uint16_t channels = 0, bits = 0, format = 0;
    std::uint32_t rate = 0;

    AudioClip clip;
    bool have_data = false;

    while (f.peek() != EOF) {
        const std::string tag = read_tag(f, path, "chunk tag");
        const std::uint32_t size = read_le<std::uint32_t>(f, path, "chunk size");
        if (tag == "fmt ") {
            LID_CHECK(size >= 16, path, ": fmt chunk too small (", size, " bytes)");
            format = read_le<std::uint16_t>(f, path, "format code");
            channels = read_le<std::uint16_t>(f, path, "channel count");
            rate = read_le<std::uint32_t>(f, path, "sample rate");
            read_le<std::uint32_t>(f, path, "byte rate");
            read_le<std::uint16_t>(f, path, "block align");
            bits = read_le<std::uint16_t>(f, path, "bits per sample");
            if (size > 16) f.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (tag == "data") {
            LID_CHECK(have_fmt, path, ": data chunk before fmt chunk");
            LID_CHECK(format == 1, path, ": format code ", format, ", only PCM (1) is supported");
            LID_CHECK(bits == 16, path, ": ", bits, " bits per sample, only 16 is supported");
            LID_CHECK(channels == 1, path, ": ", channels, " channels, only mono is supported");
            LID_CHECK(size % 2 == 0, path, ": odd data chunk size ", size);
            const size_t n = size / 2;
            std::vector<std::int16_t> raw(n);
            f.read(reinterpret_cast<char*>(raw.data()), size);
            LID_CHECK(f.good(), path, ": truncated data chunk");
            clip.samples.resize(n);
            for (size_t i = 0; i < n; ++i)
                clip.samples[i] = static_cast<float>(raw[i]) / 32768.0f;
            clip.sample_rate = rate;
            have_data = true;
        } else {
            // Skip unknown chunks (LIST, fact, ...), honoring the even-byte
            // padding rule.
            f.seekg(size + (size % 2), std::ios::cur);
            LID_CHECK(f.good() || f.eof(), path, ": truncated ", tag, " chunk");
        }
    }
    LID_CHECK(have_fmt, path, ": missing fmt chunk");
    LID_CHECK(have_data, path, ": missing data chunk");
    return clip;
}

void write_wav(const std::string& path, const std::vector<float>& samples,
               i64 sample_rate) {
    LID_CHECK(sample_rate > 0, "write_wav: bad sample rate ", sample_rate);
    std::vector<std::int16_t> raw(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        const double q = std::round(static_cast<double>(samples[i]) * 32768.0);
        raw[i] = static_cast<std::int16_t>(std::min(32767.0, std::max(-32768.0, q)));
    }

    std::ofstream f(path, std::ios::binary);
    LID_CHECK(f.is_open(), path, ": cannot open for writing");

    const std::uint32_t data_size = static_cast<std::uint32_t>(raw.size() * 2);
    const std::uint32_t riff_size = 36 + data_size;
    auto put_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); };
    auto put_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<char*>(&v), 2); };

    f.write("RIFF", 4);
    put_u32(riff_size);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    put_u32(16);
    put_u16(1); // PCM
    put_u16(1); // mono
    put_u32(static_cast<std::uint32_t>(sample_rate));
    put_u32(static_cast<std::uint32_t>(sample_rate * 2));
    put_u16(2);  // block align
    put_u16(16); // bits
    f.write("data", 4);
    put_u32(data_size);
    f.write(reinterpret_cast<const char*>(raw.data()), data_size);
    LID_CHECK(f.good(), path, ": write failed");
}

} // namespace lidkit
