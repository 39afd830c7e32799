#pragma once

#include <string>
#include <vector>

#include "lidkit/common.hpp"

namespace lidkit {

struct AudioClip {
    std::vector<float> samples; // in [-1, 1), sample i/32768 of the stored int16
    i64 sample_rate = 0;
};

// Reads a RIFF/WAVE file. Only uncompressed 16-bit mono PCM is accepted;
// anything else is rejected with a message naming the offending field.
AudioClip read_wav(const std::string& path);

// Writes 16-bit mono PCM. Samples are quantized as
// clamp(round(x * 32768), -32768, 32767), the inverse of the reader's
// i / 32768 scaling, so values already on the int16 grid round-trip exactly.
void write_wav(const std::string& path, const std::vector<float>& samples,
               i64 sample_rate);

} // namespace lidkit
