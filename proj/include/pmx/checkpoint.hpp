#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <string>

#include "pmx/errors.hpp"
#include "pmx/io.hpp"
#include "pmx/mixer.hpp"

namespace pmx {

// Model checkpoint, binary layout (all little-endian):
//   bytes 0..3   magic "PMX1"
//   bytes 4..39  nine u32 config fields: tokens, channels, token_hidden,
//                channel_hidden, blocks, num_classes, num_domains,
//                domain_hidden, final_norm (0 or 1)
//   bytes 40..43 u32 block count (must equal the blocks field)
//   bytes 44..   every parameter as f64, field order: per block the token
//                norm (gain, bias), token MLP (w1, b1, w2, b2), channel norm
//                (gain, bias), channel MLP (w1, b1, w2, b2); then final norm
//                (gain, bias), class head (w, b), domain head (w1, b1, w2,
//                b2, w3, b3).
// Runtime-only settings (dropout rate, norm epsilon) are not stored.

inline constexpr char kCheckpointMagic[4] = {'P', 'M', 'X', '1'};
inline constexpr std::size_t kCheckpointHeaderBytes = 44;

inline std::string encode_checkpoint(const MixerParams& params) {
  const MixerConfig& c = params.config;
  std::string out;
  out.reserve(kCheckpointHeaderBytes + param_count(c) * 8);
  out.append(kCheckpointMagic, 4);
  for (std::size_t v :
       {c.tokens, c.channels, c.token_hidden, c.channel_hidden, c.blocks,
        c.num_classes, c.num_domains, c.domain_hidden,
        static_cast<std::size_t>(c.final_norm ? 1 : 0), c.blocks}) {
    detail::put_u32_le(out, static_cast<std::uint32_t>(v));
  }
  for_each_param(params, [&](const std::string&, const Matrix& m, bool) {
    for (std::size_t i = 0; i < m.size(); ++i) detail::put_f64_le(out, m[i]);
  });
  return out;
}

inline MixerParams decode_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic (expected \"PMX1\")", 0);
  }
  if (bytes.size() < kCheckpointHeaderBytes) {
    throw FormatError("checkpoint header truncated", bytes.size());
  }
  std::uint32_t fields[10];
  for (int i = 0; i < 10; ++i) fields[i] = detail::get_u32_le(p + 4 + 4 * i);

  MixerConfig c;
  c.tokens = fields[0];
  c.channels = fields[1];
  c.token_hidden = fields[2];
  c.channel_hidden = fields[3];
  c.blocks = fields[4];
  c.num_classes = fields[5];
  c.num_domains = fields[6];
  c.domain_hidden = fields[7];
  if (fields[8] > 1) {
    throw FormatError("checkpoint final-norm flag must be 0 or 1", 36);
  }
  c.final_norm = fields[8] == 1;
  if (fields[9] != c.blocks) {
    throw FormatError("checkpoint block count does not match the blocks field",
                      40);
  }
  try {
    validate_config(c);
  } catch (const ParamError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what(), 4);
  }

  const std::size_t expected =
      kCheckpointHeaderBytes + param_count(c) * 8;
  if (bytes.size() != expected) {
    throw FormatError("checkpoint length mismatch: header implies " +
                          std::to_string(expected) + " bytes, file has " +
                          std::to_string(bytes.size()),
                      std::min(expected, bytes.size()));
  }

  MixerParams params = make_zero_params(c);
  std::size_t off = kCheckpointHeaderBytes;
  for_each_param(params, [&](const std::string&, Matrix& m, bool) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = std::bit_cast<double>(detail::get_u64_le(p + off));
      off += 8;
    }
  });
  return params;
}

inline void save_checkpoint(const fs::path& path, const MixerParams& params) {
  detail::write_file_bytes(path, encode_checkpoint(params));
}

inline MixerParams load_checkpoint(const fs::path& path) {
  return decode_checkpoint(detail::read_file_bytes(path));
}

}  // namespace pmx
