#include "sbmre/readout.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sbmre {

Readout gaussian_bump(const Eigen::VectorXd& centre, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("gaussian_bump: width must be > 0");
  const int d = static_cast<int>(centre.size());
  const double inv_w2 = 1.0 / (width * width);
  Readout r;
  r.name = "gaussian_bump";
  r.dim = d;
  r.f = [centre, inv_w2](const Eigen::VectorXd& x) { return std::exp(-0.5 * (x - centre).squaredNorm() * inv_w2); };
  r.laplacian = [centre, inv_w2, d](const Eigen::VectorXd& x) {
    const double q = (x - centre).squaredNorm();
    return std::exp(-0.5 * q * inv_w2) * (q * inv_w2 * inv_w2 - d * inv_w2);
  };
  return r;
}

Readout indicator_ball(const Eigen::VectorXd& centre, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("indicator_ball: radius must be > 0");
  Readout r;
  r.name = "indicator_ball";
  r.dim = static_cast<int>(centre.size());
  r.f = [centre, radius](const Eigen::VectorXd& x) { return (x - centre).norm() < radius ? 1.0 : 0.0; };
  return r;
}

Readout constant_readout(int dim, double value) {
  Readout r;
  r.name = "constant";
  r.dim = dim;
  r.f = [value](const Eigen::VectorXd&) { return value; };
  r.laplacian = [](const Eigen::VectorXd&) { return 0.0; };
  return r;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

Readout parse_readout(const std::string& raw, int dim) {
  const std::string entry = trim(raw);
  const auto open = entry.find('(');
  const auto close = entry.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw std::invalid_argument("readout '" + entry + "': expected name(args)");
  const std::string name = trim(entry.substr(0, open));
  std::vector<double> args;
  std::stringstream list(entry.substr(open + 1, close - open - 1));
  std::string item;
  while (std::getline(list, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      args.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("readout '" + entry + "': bad number '" + item + "'");
    }
  }

  auto centre_and_last = [&](const char* what) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(dim);
    if (args.size() == 1) return std::pair{c, args[0]};
    if (args.size() == static_cast<std::size_t>(dim) + 1) {
      for (int k = 0; k < dim; ++k) c[k] = args[static_cast<std::size_t>(k)];
      return std::pair{c, args.back()};
    }
    throw std::invalid_argument(std::string("readout ") + what + ": expected 1 or d+1 arguments");
  };

  if (name == "gaussian_bump") {
    auto [c, w] = centre_and_last("gaussian_bump");
    return gaussian_bump(c, w);
  }
  if (name == "indicator_ball") {
    auto [c, r] = centre_and_last("indicator_ball");
    return indicator_ball(c, r);
  }
  if (name == "constant") {
    if (args.size() != 1) throw std::invalid_argument("readout constant: expected 1 argument");
    return constant_readout(dim, args[0]);
  }
  throw std::invalid_argument("unknown readout '" + name + "'");
}

std::vector<Readout> parse_readout_catalog(const std::string& specs, int dim) {
  std::vector<Readout> out;
  std::string current;
  int depth = 0;
  auto flush = [&] {
    if (!trim(current).empty()) out.push_back(parse_readout(current, dim));
    current.clear();
  };
  for (char ch : specs) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if ((ch == ',' || ch == ';') && depth == 0) flush();
    else current += ch;
  }
  flush();
  return out;
}

}  // namespace sbmre
