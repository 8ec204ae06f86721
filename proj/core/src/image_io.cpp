#include "rvsa/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace rvsa {

namespace {

// netpbm token reader that skips whitespace and # comments
int next_int(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == EOF) throw std::runtime_error("netpbm: unexpected end of header");
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int v;
  in >> v;
  if (!in) throw std::runtime_error("netpbm: bad integer in header");
  return v;
}

}  // namespace

Tensor load_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char p, kind;
  in >> p >> kind;
  if (p != 'P' || kind < '1' || kind > '6')
    throw std::runtime_error("not a netpbm file: " + path);
  bool binary = kind >= '4';
  int channels = (kind == '3' || kind == '6') ? 3 : 1;
  bool bitmap = (kind == '1' || kind == '4');
  int w = next_int(in), h = next_int(in);
  int maxval = bitmap ? 1 : next_int(in);
  if (maxval < 1 || maxval > 65535) throw std::runtime_error("netpbm: bad maxval");
  Tensor img({channels, h, w});
  if (binary) {
    in.get();  // single whitespace after header
    if (kind == '4') throw std::runtime_error("netpbm: packed P4 bitmaps not supported");
    int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * channels * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw std::runtime_error("netpbm: truncated pixel data in " + path);
    std::size_t i = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < channels; ++c) {
          int v = buf[i++];
          if (bytes == 2) v = (v << 8) | buf[i++];
          img.at(c, y, x) = static_cast<double>(v) / maxval;
        }
  } else {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < channels; ++c) {
          int v = next_int(in);
          img.at(c, y, x) = bitmap ? 1.0 - v : static_cast<double>(v) / maxval;
        }
  }
  return img;
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1)
    throw std::invalid_argument("write_pgm: expects a 1 x H x W tensor");
  int h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = std::clamp(image.at(0, y, x), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
    }
}

std::vector<Tensor> load_image_dir(const std::string& dir, int channels) {
  namespace fs = std::filesystem;
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pbm") paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Tensor> out;
  for (const std::string& p : paths) {
    Tensor img = load_netpbm(p);
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (c == channels) {
      out.push_back(std::move(img));
      continue;
    }
    Tensor conv({channels, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double mean = 0.0;
        for (int i = 0; i < c; ++i) mean += img.at(i, y, x);
        mean /= c;
        for (int i = 0; i < channels; ++i)
          conv.at(i, y, x) = c == 1 ? img.at(0, y, x) : mean;
      }
    out.push_back(std::move(conv));
  }
  return out;
}

}  // namespace rvsa
