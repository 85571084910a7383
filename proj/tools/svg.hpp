#pragma once

// Minimal SVG writer for the plot command: rectangles, lines, polylines and text.

#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace brnlab::svg {

struct Color {
  int r = 0, g = 0, b = 0;
  std::string hex() const;
};

/// Sequential colormap for values in [0, 1] (dark blue to yellow).
Color sequential(double v);
/// Distinct color per class label.
Color categorical(int index);

class Document {
 public:
  Document(double width, double height);

  void rect(double x, double y, double w, double h, const Color& fill, double opacity = 1.0,
            const std::string& title = {});
  void line(double x1, double y1, double x2, double y2, const Color& stroke, double width = 1.0);
  void polyline(const std::vector<std::pair<double, double>>& points, const Color& stroke, double width = 1.5);
  void text(double x, double y, const std::string& s, double size = 11.0, const std::string& anchor = "start");

  std::string str() const;

 private:
  double width_, height_;
  std::ostringstream body_;
};

}  // namespace brnlab::svg
