#include <cmath>
#include <cstring>
#include <fstream>

#include "adstory/ingest.hpp"

namespace adstory {

namespace {

std::uint32_t le32(std::string_view b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[at + i]);
  return v;
}

std::uint16_t le16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[at]) |
                                    (static_cast<std::uint8_t>(b[at + 1]) << 8));
}

void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

AudioTrack read_wav(const std::filesystem::path& path) { return parse_wav(read_file(path)); }

AudioTrack parse_wav(std::string_view b) {
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE")
    throw FormatError("not a RIFF/WAVE file", 0);

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const auto id = b.substr(pos, 4);
    const std::uint32_t len = le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > b.size()) throw FormatError("short fmt chunk", pos);
      std::uint16_t format = le16(b, body);
      channels = le16(b, body + 2);
      rate = le32(b, body + 4);
      bits = le16(b, body + 14);
      if (format == kFormatExtensible && len >= 40 && body + 26 <= b.size())
        format = le16(b, body + 24);  // sub-format GUID starts with the codec tag
      if (format != kFormatPcm)
        throw FormatError("unsupported codec tag " + std::to_string(format) + " (need PCM)", body);
      if (bits != 16)
        throw FormatError("unsupported bit depth " + std::to_string(bits) + " (need 16)", body + 14);
      if (channels != 1 && channels != 2)
        throw FormatError("unsupported channel count " + std::to_string(channels), body + 2);
      if (rate == 0) throw FormatError("zero sample rate", body + 4);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk", pos);
      const std::size_t avail = std::min<std::size_t>(len, b.size() - body);
      const std::size_t frame_bytes = 2u * channels;
      const std::size_t n = avail / frame_bytes;
      AudioTrack track;
      track.sample_rate = static_cast<int>(rate);
      track.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(le16(b, body + i * frame_bytes + 2 * c));
          acc += static_cast<double>(raw) / 32768.0;
        }
        track.samples[i] = acc / channels;
      }
      return track;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw FormatError("missing fmt chunk", b.size());
  throw FormatError("missing data chunk", b.size());
}

std::string encode_wav(const AudioTrack& audio) {
  if (audio.sample_rate <= 0) throw ValidationError("sample rate must be positive");
  const auto data_len = static_cast<std::uint32_t>(audio.samples.size() * 2);
  std::string s = "RIFF";
  put32(s, 36 + data_len);
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, kFormatPcm);
  put16(s, 1);
  put32(s, static_cast<std::uint32_t>(audio.sample_rate));
  put32(s, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  put16(s, 2);
  put16(s, 16);
  s += "data";
  put32(s, data_len);
  for (double x : audio.samples) {
    const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
    put16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return s;
}

void write_wav(const std::filesystem::path& path, const AudioTrack& audio) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto bytes = encode_wav(audio);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace adstory
