#include "svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace brnlab::svg {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string Color::hex() const {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

Color sequential(double v) {
  // Anchors approximate a perceptually ordered blue-green-yellow ramp.
  static constexpr std::array<std::array<int, 3>, 5> anchors = {
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  const double x = std::clamp(v, 0.0, 1.0) * static_cast<double>(anchors.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(x), anchors.size() - 2);
  const double f = x - static_cast<double>(i);
  auto mixc = [&](int c) {
    return static_cast<int>(std::lround(anchors[i][c] + f * (anchors[i + 1][c] - anchors[i][c])));
  };
  return {mixc(0), mixc(1), mixc(2)};
}

Color categorical(int index) {
  static constexpr std::array<std::array<int, 3>, 8> palette = {{{31, 119, 180},
                                                                 {255, 127, 14},
                                                                 {44, 160, 44},
                                                                 {214, 39, 40},
                                                                 {148, 103, 189},
                                                                 {140, 86, 75},
                                                                 {227, 119, 194},
                                                                 {127, 127, 127}}};
  const auto& c = palette[static_cast<std::size_t>(std::abs(index)) % palette.size()];
  return {c[0], c[1], c[2]};
}

Document::Document(double width, double height) : width_(width), height_(height) {}

void Document::rect(double x, double y, double w, double h, const Color& fill, double opacity,
                    const std::string& title) {
  body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
        << "\" fill=\"" << fill.hex() << "\"";
  if (opacity < 1.0) body_ << " fill-opacity=\"" << num(opacity) << "\"";
  if (title.empty()) {
    body_ << "/>\n";
  } else {
    body_ << "><title>" << escape(title) << "</title></rect>\n";
  }
}

void Document::line(double x1, double y1, double x2, double y2, const Color& stroke, double width) {
  body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
        << "\" stroke=\"" << stroke.hex() << "\" stroke-width=\"" << num(width) << "\"/>\n";
}

void Document::polyline(const std::vector<std::pair<double, double>>& points, const Color& stroke, double width) {
  body_ << "<polyline fill=\"none\" stroke=\"" << stroke.hex() << "\" stroke-width=\"" << num(width)
        << "\" points=\"";
  for (const auto& [x, y] : points) body_ << num(x) << "," << num(y) << " ";
  body_ << "\"/>\n";
}

void Document::text(double x, double y, const std::string& s, double size, const std::string& anchor) {
  body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\""
        << num(size) << "\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
}

std::string Document::str() const {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\"" << num(height_)
     << "\" viewBox=\"0 0 " << num(width_) << " " << num(height_) << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
     << body_.str() << "</svg>\n";
  return os.str();
}

}  // namespace brnlab::svg
