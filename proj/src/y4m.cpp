#include <charconv>
#include <fstream>
#include <sstream>

#include "adstory/ingest.hpp"

namespace adstory {

namespace {

constexpr std::string_view kMagic = "YUV4MPEG2";

std::size_t chroma_bytes(Chroma c, int w, int h) {
  switch (c) {
    case Chroma::k420:
      return 2 * static_cast<std::size_t>((w + 1) / 2) * static_cast<std::size_t>((h + 1) / 2);
    case Chroma::k444:
      return 2 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    case Chroma::kMono:
      return 0;
  }
  return 0;
}

template <class T>
bool parse_int(std::string_view s, T& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

FrameSeq read_y4m(const std::filesystem::path& path) {
  return parse_y4m(read_file(path));
}

FrameSeq parse_y4m(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic)
    throw FormatError("not a YUV4MPEG2 stream (bad magic)", 0);
  const auto eol = bytes.find('\n');
  if (eol == std::string_view::npos)
    throw FormatError("unterminated Y4M header", bytes.size());

  FrameSeq seq;
  seq.fps = {};
  Chroma chroma = Chroma::k420;
  bool have_w = false, have_h = false, have_f = false;

  std::size_t pos = kMagic.size();
  while (pos < eol) {
    if (bytes[pos] == ' ') {
      ++pos;
      continue;
    }
    const auto end = std::min(bytes.find(' ', pos), eol);
    const auto token = bytes.substr(pos, end - pos);
    const auto value = token.substr(1);
    switch (token[0]) {
      case 'W':
        if (!parse_int(value, seq.width) || seq.width <= 0)
          throw FormatError("bad width token '" + std::string(token) + "'", pos);
        have_w = true;
        break;
      case 'H':
        if (!parse_int(value, seq.height) || seq.height <= 0)
          throw FormatError("bad height token '" + std::string(token) + "'", pos);
        have_h = true;
        break;
      case 'F': {
        const auto colon = value.find(':');
        if (colon == std::string_view::npos || !parse_int(value.substr(0, colon), seq.fps.num) ||
            !parse_int(value.substr(colon + 1), seq.fps.den) || !seq.fps.positive())
          throw FormatError("bad frame-rate token '" + std::string(token) + "'", pos);
        have_f = true;
        break;
      }
      case 'C':
        if (value == "420" || value == "420jpeg" || value == "420paldv" || value == "420mpeg2") {
          chroma = Chroma::k420;
        } else if (value == "444") {
          chroma = Chroma::k444;
        } else if (value == "mono") {
          chroma = Chroma::kMono;
        } else {
          throw FormatError("unsupported chroma subsampling '" + std::string(value) + "'", pos);
        }
        break;
      case 'I':
      case 'A':
      case 'X':
        break;
      default:
        throw FormatError("unknown header token '" + std::string(token) + "'", pos);
    }
    pos = end;
  }
  if (!have_w || !have_h || !have_f)
    throw FormatError("Y4M header missing W, H or F", eol);
  seq.fps = seq.fps.reduced();

  const std::size_t luma = static_cast<std::size_t>(seq.width) * static_cast<std::size_t>(seq.height);
  const std::size_t payload = luma + chroma_bytes(chroma, seq.width, seq.height);
  pos = eol + 1;
  while (pos < bytes.size()) {
    if (bytes.substr(pos, 5) != "FRAME")
      throw FormatError("expected FRAME marker", pos);
    const auto frame_eol = bytes.find('\n', pos);
    if (frame_eol == std::string_view::npos)
      throw FormatError("unterminated FRAME header", pos);
    const std::size_t data = frame_eol + 1;
    const std::size_t available = bytes.size() - data;
    if (available < payload)
      throw FormatError("truncated frame " + std::to_string(seq.frames.size()) + ": expected " +
                            std::to_string(payload) + " bytes, got " + std::to_string(available),
                        data);
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data() + data);
    seq.frames.emplace_back(p, p + luma);
    pos = data + payload;
  }
  return seq;
}

std::string encode_y4m(const FrameSeq& video, Chroma chroma) {
  std::string out = "YUV4MPEG2 W" + std::to_string(video.width) + " H" +
                    std::to_string(video.height) + " F" + std::to_string(video.fps.num) + ":" +
                    std::to_string(video.fps.den) + " Ip A1:1";
  switch (chroma) {
    case Chroma::k420: out += " C420jpeg"; break;
    case Chroma::k444: out += " C444"; break;
    case Chroma::kMono: out += " Cmono"; break;
  }
  out += '\n';
  const std::size_t luma = static_cast<std::size_t>(video.width) * static_cast<std::size_t>(video.height);
  const std::string chroma_fill(chroma_bytes(chroma, video.width, video.height), '\x80');
  for (const auto& f : video.frames) {
    if (f.size() != luma) throw ValidationError("frame size does not match width x height");
    out += "FRAME\n";
    out.append(reinterpret_cast<const char*>(f.data()), f.size());
    out += chroma_fill;
  }
  return out;
}

void write_y4m(const std::filesystem::path& path, const FrameSeq& video, Chroma chroma) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto bytes = encode_y4m(video, chroma);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace adstory
