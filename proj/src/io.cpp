#include "mdb/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mdb {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  require(f != nullptr, Err::Io, "cannot open " + path);
  return f;
}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

void write_png(const std::string& path, int width, int height, int bit_depth,
               int color_type, const std::vector<png_bytep>& rows) {
  FilePtr f = open_file(path, "wb");
  PngWriter w;
  w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(w.png != nullptr, Err::Io, "png_create_write_struct failed");
  w.info = png_create_info_struct(w.png);
  require(w.info != nullptr, Err::Io, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(w.png))) fail(Err::Io, "png write error for " + path);
  png_init_io(w.png, f.get());
  png_set_IHDR(w.png, w.info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (bit_depth == 16) png_set_swap(w.png);  // buffers are little-endian
  png_write_image(w.png, const_cast<png_bytep*>(rows.data()));
  png_write_end(w.png, nullptr);
}

void read_png_header(PngReader& r, std::FILE* f, const std::string& path, png_uint_32& width,
                     png_uint_32& height, int& bit_depth, int& color_type) {
  unsigned char sig[8];
  require(std::fread(sig, 1, 8, f) == 8 && !png_sig_cmp(sig, 0, 8), Err::FormatViolation,
          path + " is not a PNG file");
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(r.png != nullptr, Err::Io, "png_create_read_struct failed");
  r.info = png_create_info_struct(r.png);
  require(r.info != nullptr, Err::Io, "png_create_info_struct failed");
  if (setjmp(png_jmpbuf(r.png))) fail(Err::FormatViolation, "png read error for " + path);
  png_init_io(r.png, f);
  png_set_sig_bytes(r.png, 8);
  png_read_info(r.png, r.info);
  width = png_get_image_width(r.png, r.info);
  height = png_get_image_height(r.png, r.info);
  bit_depth = png_get_bit_depth(r.png, r.info);
  color_type = png_get_color_type(r.png, r.info);
}

}  // namespace

void save_depth_png(const std::string& path, const DepthMap& depth) {
  std::vector<uint16_t> mm(static_cast<size_t>(depth.width) * depth.height);
  for (size_t i = 0; i < mm.size(); ++i) {
    double v = std::lround(static_cast<double>(depth.meters[i]) * 1000.0);
    mm[i] = static_cast<uint16_t>(std::clamp(v, 0.0, 65535.0));
  }
  std::vector<png_bytep> rows(depth.height);
  for (int y = 0; y < depth.height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(mm.data() + static_cast<size_t>(y) * depth.width);
  write_png(path, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

DepthMap load_depth_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  read_png_header(r, f.get(), path, width, height, bit_depth, color_type);
  require(bit_depth == 16 && color_type == PNG_COLOR_TYPE_GRAY, Err::FormatViolation,
          path + " must be 16-bit single-channel");
  png_set_swap(r.png);

  std::vector<uint16_t> mm(static_cast<size_t>(width) * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = reinterpret_cast<png_bytep>(mm.data() + static_cast<size_t>(y) * width);
  png_read_image(r.png, rows.data());

  DepthMap depth(static_cast<int>(width), static_cast<int>(height));
  for (size_t i = 0; i < mm.size(); ++i)
    depth.meters[i] = static_cast<float>(mm[i]) / 1000.0f;  // mm -> meters
  return depth;
}

void save_rgb_png(const std::string& path, const Image& rgb) {
  require(rgb.channels == 3, Err::DimensionMismatch, "rgb image must have 3 channels");
  std::vector<unsigned char> bytes(static_cast<size_t>(rgb.width) * rgb.height * 3);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = std::lround(static_cast<double>(rgb.at(c, y, x)) * 255.0);
        bytes[(static_cast<size_t>(y) * rgb.width + x) * 3 + c] =
            static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
      }
  std::vector<png_bytep> rows(rgb.height);
  for (int y = 0; y < rgb.height; ++y)
    rows[y] = bytes.data() + static_cast<size_t>(y) * rgb.width * 3;
  write_png(path, rgb.width, rgb.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

Image load_rgb_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngReader r;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  read_png_header(r, f.get(), path, width, height, bit_depth, color_type);
  require(bit_depth == 8 && color_type == PNG_COLOR_TYPE_RGB, Err::FormatViolation,
          path + " must be 8-bit RGB");

  std::vector<unsigned char> bytes(static_cast<size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = bytes.data() + static_cast<size_t>(y) * width * 3;
  png_read_image(r.png, rows.data());

  Image rgb(3, static_cast<int>(height), static_cast<int>(width));
  for (png_uint_32 y = 0; y < height; ++y)
    for (png_uint_32 x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        rgb.at(c, y, x) =
            static_cast<float>(bytes[(static_cast<size_t>(y) * width + x) * 3 + c]) / 255.0f;
  return rgb;
}

void save_camera(const std::string& path, const CameraModel& camera) {
  std::ostringstream os;
  os.precision(17);
  os << camera.fx << " " << camera.fy << " " << camera.cx << " " << camera.cy << "\n";
  for (int i = 0; i < 3; ++i)
    os << camera.rotation[i][0] << " " << camera.rotation[i][1] << " "
       << camera.rotation[i][2] << "\n";
  os << camera.translation[0] << " " << camera.translation[1] << " "
     << camera.translation[2] << "\n";
  write_text_file(path, os.str());
}

CameraModel load_camera(const std::string& path, int image_width, int image_height) {
  std::istringstream is(read_text_file(path));
  CameraModel cam;
  is >> cam.fx >> cam.fy >> cam.cx >> cam.cy;
  for (int i = 0; i < 3; ++i)
    is >> cam.rotation[i][0] >> cam.rotation[i][1] >> cam.rotation[i][2];
  is >> cam.translation[0] >> cam.translation[1] >> cam.translation[2];
  require(!is.fail(), Err::FormatViolation, "malformed camera file " + path);
  cam.image_width = image_width;
  cam.image_height = image_height;
  cam.validate();
  return cam;
}

namespace {

constexpr char kVxgMagic[4] = {'V', 'X', 'G', '1'};
constexpr char kCkptMagic[4] = {'M', 'D', 'B', '1'};

template <typename T>
void write_pod(std::FILE* f, const T& v) {
  require(std::fwrite(&v, sizeof(T), 1, f) == 1, Err::Io, "short write");
}

template <typename T>
T read_pod(std::FILE* f, const std::string& path) {
  T v;
  require(std::fread(&v, sizeof(T), 1, f) == 1, Err::FormatViolation,
          "truncated file " + path);
  return v;
}

void write_vxg_header(std::FILE* f, const GridSpec& spec, uint32_t channels, uint8_t dtype) {
  require(std::fwrite(kVxgMagic, 1, 4, f) == 4, Err::Io, "short write");
  write_pod(f, channels);
  write_pod(f, static_cast<uint32_t>(spec.dims[0]));
  write_pod(f, static_cast<uint32_t>(spec.dims[1]));
  write_pod(f, static_cast<uint32_t>(spec.dims[2]));
  for (int a = 0; a < 3; ++a) write_pod(f, static_cast<float>(spec.origin[a]));
  write_pod(f, static_cast<float>(spec.voxel_size));
  write_pod(f, static_cast<float>(spec.truncation));
  write_pod(f, dtype);
}

void read_vxg_header(std::FILE* f, const std::string& path, GridSpec& spec,
                     uint32_t& channels, uint8_t& dtype) {
  char magic[4];
  require(std::fread(magic, 1, 4, f) == 4 && std::memcmp(magic, kVxgMagic, 4) == 0,
          Err::FormatViolation, "bad magic in " + path);
  channels = read_pod<uint32_t>(f, path);
  spec.dims[0] = static_cast<int>(read_pod<uint32_t>(f, path));
  spec.dims[1] = static_cast<int>(read_pod<uint32_t>(f, path));
  spec.dims[2] = static_cast<int>(read_pod<uint32_t>(f, path));
  for (int a = 0; a < 3; ++a) spec.origin[a] = read_pod<float>(f, path);
  spec.voxel_size = read_pod<float>(f, path);
  spec.truncation = read_pod<float>(f, path);
  dtype = read_pod<uint8_t>(f, path);
}

}  // namespace

void save_vxg(const std::string& path, const VoxelGrid& grid) {
  FilePtr f = open_file(path, "wb");
  write_vxg_header(f.get(), grid.spec, static_cast<uint32_t>(grid.channels), 0);
  require(std::fwrite(grid.values.data(), sizeof(float), grid.values.size(), f.get()) ==
              grid.values.size(),
          Err::Io, "short write to " + path);
}

VoxelGrid load_vxg(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  GridSpec spec;
  uint32_t channels = 0;
  uint8_t dtype = 0;
  read_vxg_header(f.get(), path, spec, channels, dtype);
  require(dtype == 0, Err::FormatViolation, path + " does not hold f32 data");
  spec.validate();
  VoxelGrid grid(spec, static_cast<int>(channels));
  require(std::fread(grid.values.data(), sizeof(float), grid.values.size(), f.get()) ==
              grid.values.size(),
          Err::FormatViolation, "truncated payload in " + path);
  return grid;
}

void save_vxg_labels(const std::string& path, const LabelVolume& labels,
                     const GridSpec& spec) {
  require(static_cast<int64_t>(labels.size()) == spec.voxel_count(), Err::DimensionMismatch,
          "label volume does not match grid spec");
  FilePtr f = open_file(path, "wb");
  write_vxg_header(f.get(), spec, 1, 1);
  require(std::fwrite(labels.data(), 1, labels.size(), f.get()) == labels.size(), Err::Io,
          "short write to " + path);
}

std::pair<LabelVolume, GridSpec> load_vxg_labels(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  GridSpec spec;
  uint32_t channels = 0;
  uint8_t dtype = 0;
  read_vxg_header(f.get(), path, spec, channels, dtype);
  require(dtype == 1 && channels == 1, Err::FormatViolation,
          path + " does not hold a u8 label volume");
  spec.validate();
  LabelVolume labels(spec.voxel_count());
  require(std::fread(labels.data(), 1, labels.size(), f.get()) == labels.size(),
          Err::FormatViolation, "truncated payload in " + path);
  return {std::move(labels), spec};
}

void save_image_vxg(const std::string& path, const Image& image) {
  GridSpec spec;
  spec.dims = {image.width, image.height, 1};
  VoxelGrid grid(spec, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) grid.at(c, x, y, 0) = image.at(c, y, x);
  save_vxg(path, grid);
}

Image load_image_vxg(const std::string& path) {
  VoxelGrid grid = load_vxg(path);
  require(grid.spec.dims[2] == 1, Err::FormatViolation, path + " is not a 2D map");
  Image image(grid.channels, grid.spec.dims[1], grid.spec.dims[0]);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) image.at(c, y, x) = grid.at(c, x, y, 0);
  return image;
}

namespace {

void write_entries(std::FILE* f, const std::vector<CheckpointEntry>& entries) {
  write_pod(f, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    write_pod(f, static_cast<uint32_t>(e.name.size()));
    require(std::fwrite(e.name.data(), 1, e.name.size(), f) == e.name.size(), Err::Io,
            "short write");
    write_pod(f, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) write_pod(f, static_cast<uint32_t>(d));
    require(std::fwrite(e.values.data(), sizeof(float), e.values.size(), f) ==
                e.values.size(),
            Err::Io, "short write");
  }
}

std::vector<CheckpointEntry> read_entries(std::FILE* f, const std::string& path) {
  uint32_t count = read_pod<uint32_t>(f, path);
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    uint32_t name_len = read_pod<uint32_t>(f, path);
    e.name.resize(name_len);
    require(std::fread(e.name.data(), 1, name_len, f) == name_len, Err::FormatViolation,
            "truncated file " + path);
    uint32_t rank = read_pod<uint32_t>(f, path);
    e.shape.resize(rank);
    int64_t n = 1;
    for (auto& d : e.shape) {
      d = static_cast<int64_t>(read_pod<uint32_t>(f, path));
      n *= d;
    }
    e.values.resize(n);
    require(std::fread(e.values.data(), sizeof(float), e.values.size(), f) ==
                e.values.size(),
            Err::FormatViolation, "truncated payload in " + path);
  }
  return entries;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& params,
                     const std::vector<CheckpointEntry>& opt_state) {
  FilePtr f = open_file(path, "wb");
  require(std::fwrite(kCkptMagic, 1, 4, f.get()) == 4, Err::Io, "short write");
  write_entries(f.get(), params);
  write_entries(f.get(), opt_state);
}

std::pair<std::vector<CheckpointEntry>, std::vector<CheckpointEntry>> load_checkpoint(
    const std::string& path) {
  FilePtr f = open_file(path, "rb");
  char magic[4];
  require(std::fread(magic, 1, 4, f.get()) == 4 && std::memcmp(magic, kCkptMagic, 4) == 0,
          Err::FormatViolation, "bad magic in " + path);
  auto params = read_entries(f.get(), path);
  auto opt = read_entries(f.get(), path);
  return {std::move(params), std::move(opt)};
}

template <typename T>
std::vector<CheckpointEntry> to_entries(
    const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(named.size());
  for (const auto& [name, tensor] : named) {
    CheckpointEntry e;
    e.name = name;
    e.shape = tensor.shape();
    e.values.assign(tensor.values().begin(), tensor.values().end());
    entries.push_back(std::move(e));
  }
  return entries;
}

template <typename T>
void apply_entries(const std::vector<CheckpointEntry>& entries,
                   const std::vector<std::pair<std::string, Tensor<T>>>& named) {
  for (const auto& [name, tensor] : named) {
    const CheckpointEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == name) {
        found = &e;
        break;
      }
    require(found != nullptr, Err::FormatViolation, "checkpoint missing entry " + name);
    require(found->shape == tensor.shape(), Err::ShapeMismatch,
            "checkpoint shape mismatch for " + name);
    Tensor<T> t = tensor;
    for (size_t i = 0; i < found->values.size(); ++i)
      t.data()[i] = static_cast<T>(found->values[i]);
  }
}

void save_class_weights(const std::string& path, const ClassWeights& weights) {
  std::ostringstream os;
  os.precision(17);
  for (int c = 0; c < kNumClasses; ++c) os << c << " " << weights.weights[c] << "\n";
  write_text_file(path, os.str());
}

ClassWeights load_class_weights(const std::string& path) {
  std::istringstream is(read_text_file(path));
  ClassWeights w = ClassWeights::uniform();
  for (int c = 0; c < kNumClasses; ++c) {
    int idx = -1;
    double value = 0.0;
    is >> idx >> value;
    require(!is.fail() && idx == c, Err::FormatViolation, "malformed weight file " + path);
    w.weights[c] = value;
  }
  w.validate();
  return w;
}

void save_manifest(const std::string& path, const std::vector<SamplePaths>& samples) {
  std::ostringstream os;
  for (const auto& s : samples)
    os << s.rgb << " " << s.depth << " " << s.labels << " " << s.camera << "\n";
  write_text_file(path, os.str());
}

std::vector<SamplePaths> load_manifest(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::vector<SamplePaths> samples;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SamplePaths s;
    ls >> s.rgb >> s.depth >> s.labels >> s.camera;
    require(!ls.fail(), Err::FormatViolation, "malformed manifest line: " + line);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::Io, "cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Err::Io, "cannot open " + path + " for writing");
  f << content;
  require(f.good(), Err::Io, "failed writing " + path);
}

#define MDB_INSTANTIATE_IO(T)                                                       \
  template std::vector<CheckpointEntry> to_entries(                                 \
      const std::vector<std::pair<std::string, Tensor<T>>>&);                       \
  template void apply_entries(const std::vector<CheckpointEntry>&,                  \
                              const std::vector<std::pair<std::string, Tensor<T>>>&);

MDB_INSTANTIATE_IO(float)
MDB_INSTANTIATE_IO(double)
#undef MDB_INSTANTIATE_IO

}  // namespace mdb
