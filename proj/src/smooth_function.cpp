#include "pbef/smooth_function.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace pbef {

void check_derivatives(const SmoothFunction& f, const std::vector<double>& probes, double rtol) {
    const double eps = std::numeric_limits<double>::epsilon();
    for (double x : probes) {
        const double h1 = std::cbrt(eps) * std::max(1.0, std::abs(x));
        const double fd1 = (f.eval(x + h1) - f.eval(x - h1)) / (2.0 * h1);
        const double h2 = std::sqrt(std::sqrt(eps)) * std::max(1.0, std::abs(x));
        const double fd2 = (f.eval(x + h2) - 2.0 * f.eval(x) + f.eval(x - h2)) / (h2 * h2);

        const double scale1 = std::max({1.0, std::abs(fd1), std::abs(f.d1(x))});
        const double scale2 = std::max({1.0, std::abs(fd2), std::abs(f.d2(x))});
        if (std::abs(f.d1(x) - fd1) > rtol * scale1 || std::abs(f.d2(x) - fd2) > rtol * scale2) {
            std::ostringstream msg;
            msg << "SmoothFunction derivative check failed at x = " << x << ": d1 = " << f.d1(x)
                << " (fd " << fd1 << "), d2 = " << f.d2(x) << " (fd " << fd2 << ")";
            throw NumericalError(msg.str());
        }
    }
}

} // namespace pbef
