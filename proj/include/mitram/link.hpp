#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "mitram/normal.hpp"

namespace mitram {

enum class LinkKind { Probit, Logit, CloglogInv };

// Univariate error distribution F attached to the latent scale: standard
// normal, standard logistic, or the minimum extreme-value law
// F(x) = 1 - exp(-exp(x)) whose inverse is the complementary log-log.
// All four member functions are written against the usual tail hazards:
// cdf saturates instead of returning an exact 0 or 1 (a hard zero would feed
// an infinite quantile into downstream compositions at finite arguments),
// and logpdf is evaluated in log space throughout.
class LinkFamily {
 public:
  LinkFamily() = default;
  explicit LinkFamily(LinkKind kind) : kind_(kind) {}

  static LinkFamily probit() { return LinkFamily(LinkKind::Probit); }
  static LinkFamily logit() { return LinkFamily(LinkKind::Logit); }
  static LinkFamily cloglog_inv() { return LinkFamily(LinkKind::CloglogInv); }

  LinkKind kind() const { return kind_; }

  double cdf(double x) const {
    double p;
    switch (kind_) {
      case LinkKind::Probit:
        p = norm_cdf(x);
        break;
      case LinkKind::Logit:
        if (x >= 0.0) {
          p = 1.0 / (1.0 + std::exp(-x));
        } else {
          const double e = std::exp(x);
          p = e / (1.0 + e);
        }
        break;
      case LinkKind::CloglogInv:
        p = -std::expm1(-std::exp(x));
        break;
    }
    if (p < kTailFloor) return kTailFloor;
    if (p > kTailCeil) return kTailCeil;
    return p;
  }

  double quantile(double p) const {
    switch (kind_) {
      case LinkKind::Probit:
        return norm_quantile(p);
      case LinkKind::Logit:
        return std::log(p) - std::log1p(-p);
      case LinkKind::CloglogInv:
        return std::log(-std::log1p(-p));
    }
    return 0.0;  // unreachable
  }

  double logpdf(double x) const {
    switch (kind_) {
      case LinkKind::Probit:
        return norm_logpdf(x);
      case LinkKind::Logit: {
        const double ax = std::fabs(x);
        return -ax - 2.0 * std::log1p(std::exp(-ax));
      }
      case LinkKind::CloglogInv:
        return x - std::exp(x);
    }
    return 0.0;  // unreachable
  }

  double pdf(double x) const { return std::exp(logpdf(x)); }

  std::string name() const {
    switch (kind_) {
      case LinkKind::Probit: return "probit";
      case LinkKind::Logit: return "logit";
      case LinkKind::CloglogInv: return "cloglog";
    }
    return "";
  }

  static LinkFamily from_name(const std::string& s) {
    if (s == "probit") return probit();
    if (s == "logit") return logit();
    if (s == "cloglog") return cloglog_inv();
    throw std::invalid_argument("unknown link family: " + s);
  }

 private:
  static constexpr double kTailFloor = 1e-300;
  static constexpr double kTailCeil = 1.0 - 1e-16;

  LinkKind kind_ = LinkKind::Probit;
};

}  // namespace mitram
