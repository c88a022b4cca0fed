#include "scopeloop/image_io.hpp"

#include <cstring>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "scopeloop/error.hpp"

namespace scopeloop {

namespace {

Frame from_bgr_mat(const cv::Mat& mat) {
  Frame bgr(mat.cols, mat.rows, PixelFormat::BGR);
  for (int y = 0; y < mat.rows; ++y) {
    std::memcpy(bgr.at(0, y), mat.ptr(y), bgr.row_bytes());
  }
  return convert_format(bgr, PixelFormat::RGB);
}

}  // namespace

Frame decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::DecodeFailure, "empty image payload");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat mat;
  try {
    mat = cv::imdecode(buf, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::DecodeFailure, e.what());
  }
  if (mat.empty() || mat.type() != CV_8UC3) throw Error(ErrorCode::DecodeFailure, "undecodable image payload");
  return from_bgr_mat(mat);
}

Frame read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::DecodeFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(ErrorCode::DecodeFailure, path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Frame& frame) {
  if (frame.empty()) throw Error(ErrorCode::EmptyFrame, "cannot encode an empty frame");
  // OpenCV expects BGR(A) channel order.
  const Frame native = frame.format == PixelFormat::RGB ? convert_format(frame, PixelFormat::BGR) : frame;
  const int type = native.format == PixelFormat::BGRA ? CV_8UC4 : CV_8UC3;
  const cv::Mat mat(native.height, native.width, type, const_cast<std::uint8_t*>(native.pixels.data()));
  std::vector<std::uint8_t> out;
  // Level 1 keeps encoding cheap for streaming; output stays lossless.
  if (!cv::imencode(".png", mat, out, {cv::IMWRITE_PNG_COMPRESSION, 1})) {
    throw Error(ErrorCode::IoFailure, "PNG encoding failed");
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Frame& frame) {
  const auto bytes = encode_png(frame);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace scopeloop
