#include "bsvlab/conditions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bsvlab/parallel.hpp"
#include "bsvlab/random.hpp"

namespace bsvlab {
namespace {

constexpr double kViolationTol = 1e-9;
constexpr double kBoundaryQ = 1e-8;
constexpr std::array<double, 5> kScales{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
constexpr int kMaxSweeps = 25;
constexpr int kDrawTries = 20;

double neg(double x)
{
    return x < 0.0 ? -x : 0.0;
}

// Sum over columns of col^T H col.
double hessian_form(const Mat& h, const Mat& z)
{
    double acc = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        acc += z.col(c).dot(h * z.col(c));
    }
    return acc;
}

enum class Field { t, y, y2, z, z2, u, u2 };

struct Coord {
    Field field;
    Eigen::Index index;
};

double& coord_ref(PointSample& s, const Coord& c)
{
    switch (c.field) {
    case Field::t: return s.t;
    case Field::y: return s.y(c.index);
    case Field::y2: return s.y2(c.index);
    case Field::z: return s.z.data()[c.index];
    case Field::z2: return s.z2.data()[c.index];
    case Field::u: return s.u.data()[c.index];
    case Field::u2: return s.u2.data()[c.index];
    }
    return s.t;
}

// Partner coordinate for "match" moves (z <-> z', u <-> u').
std::optional<double> partner(const PointSample& s, const Coord& c)
{
    switch (c.field) {
    case Field::z: return s.z2.size() ? std::optional<double>(s.z2.data()[c.index]) : std::nullopt;
    case Field::z2: return s.z.data()[c.index];
    case Field::u: return s.u2.size() ? std::optional<double>(s.u2.data()[c.index]) : std::nullopt;
    case Field::u2: return s.u.data()[c.index];
    default: return std::nullopt;
    }
}

// A condition in the form lhs <= rhs0 + C q, with its sampling geometry.
struct Problem {
    std::string name;
    const ConvexBody* body = nullptr;  // where y lives relative to the constraint
    bool hessian = false;              // enforce the singular margin on y
    bool c_free = false;
    int ydim = 1;
    int rows = 1;  // rows of z and u
    int d = 1;
    std::size_t atoms = 0;
    bool use_y = true, use_y2 = false, use_z = true, use_z2 = false, use_u = true, use_u2 = false;
    std::function<void(PointSample&)> repair;
    std::function<std::optional<Terms>(const PointSample&)> eval;
};

struct Evaluated {
    PointSample sample;
    std::optional<Terms> terms;
};

class Engine {
public:
    Engine(const Problem& p, const Sampler& s, double c_max) : p_(p), s_(s), c_max_(c_max)
    {
        if (s_.samples == 0) {
            throw std::invalid_argument("sampler needs at least one sample");
        }
        const auto add = [&](Field f, Eigen::Index n) {
            for (Eigen::Index i = 0; i < n; ++i) {
                coords_.push_back({f, i});
            }
        };
        add(Field::t, 1);
        if (p_.use_y) add(Field::y, p_.ydim);
        if (p_.use_y2) add(Field::y2, p_.ydim);
        const auto zn = static_cast<Eigen::Index>(p_.rows) * p_.d;
        const auto un = static_cast<Eigen::Index>(p_.rows) * static_cast<Eigen::Index>(p_.atoms);
        if (p_.use_z) add(Field::z, zn);
        if (p_.use_z2) add(Field::z2, zn);
        if (p_.use_u) add(Field::u, un);
        if (p_.use_u2) add(Field::u2, un);
    }

    ConditionVerdict run() const;

private:
    std::optional<Terms> evaluate(const PointSample& s) const
    {
        if (p_.hessian && p_.body != nullptr && p_.body->near_singular(s.y, s_.singular_margin)) {
            return std::nullopt;
        }
        return p_.eval(s);
    }

    PointSample draw(CounterStream& rs) const;
    double range_of(Field f) const;
    bool normalize(PointSample& s, double eps) const;
    bool push_outside(PointSample& s) const;
    std::optional<Terms> ascend(PointSample& s, std::optional<double> eps) const;

    const Problem& p_;
    const Sampler& s_;
    double c_max_;
    std::vector<Coord> coords_;
};

double Engine::range_of(Field f) const
{
    switch (f) {
    case Field::t: return s_.horizon;
    case Field::y:
    case Field::y2: return s_.y_range;
    case Field::z:
    case Field::z2: return s_.z_range;
    default: return s_.u_range;
    }
}

PointSample Engine::draw(CounterStream& rs) const
{
    const auto uni = [&](double r) { return r * (2.0 * rs.uniform() - 1.0); };
    const auto fill = [&](auto& x, double r) {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] = uni(r);
        }
    };
    PointSample s;
    s.t = s_.horizon * rs.uniform();
    s.y.resize(p_.ydim);
    s.y2.resize(p_.ydim);
    s.z.resize(p_.rows, p_.d);
    s.z2.resize(p_.rows, p_.d);
    s.u.resize(p_.rows, static_cast<Eigen::Index>(p_.atoms));
    s.u2.resize(p_.rows, static_cast<Eigen::Index>(p_.atoms));
    fill(s.y, s_.y_range);
    fill(s.y2, s_.y_range);
    fill(s.z, s_.z_range);
    fill(s.z2, s_.z_range);
    fill(s.u, s_.u_range);
    fill(s.u2, s_.u_range);
    if (p_.body != nullptr && rs.uniform() < s_.boundary_fraction) {
        const double dist = s_.boundary_near * std::pow(s_.boundary_far / s_.boundary_near, rs.uniform());
        for (int tries = 0; tries < kDrawTries; ++tries) {
            const Vec proj = project(*p_.body, s.y);
            const Vec n = s.y - proj;
            const double len = n.norm();
            if (len > 0.0) {
                s.y = proj + (dist / len) * n;
                break;
            }
            fill(s.y, s_.y_range);
        }
    }
    if (p_.repair) {
        p_.repair(s);
    }
    return s;
}

// Moves an interior y out of K along the first coordinate direction that
// leaves it.
bool Engine::push_outside(PointSample& s) const
{
    if (!p_.body->contains(s.y)) {
        return true;
    }
    for (int i = 0; i < p_.ydim; ++i) {
        for (double sign : {1.0, -1.0}) {
            for (double step = 1.0; step < 1e6; step *= 2.0) {
                Vec y = s.y;
                y(i) += sign * step;
                if (!p_.body->contains(y)) {
                    s.y = y;
                    return true;
                }
            }
        }
    }
    return false;
}

bool Engine::normalize(PointSample& s, double eps) const
{
    const Vec proj = project(*p_.body, s.y);
    const Vec n = s.y - proj;
    const double len = n.norm();
    if (!(len > 0.0)) {
        return false;
    }
    Vec y = proj + (eps / len) * n;
    // a rounding-level residual is not a normal direction
    if (std::fabs(std::sqrt(dist2(*p_.body, y)) - eps) > 1e-3 * eps) {
        return false;
    }
    s.y = std::move(y);
    return true;
}

// Coordinate ascent on lhs - rhs0. With eps set, y is kept at distance eps
// from K so q is fixed and the objective does not depend on C.
std::optional<Terms> Engine::ascend(PointSample& s, std::optional<double> eps) const
{
    if (eps && !normalize(s, *eps)) {
        return std::nullopt;
    }
    auto best = evaluate(s);
    if (!best) {
        return std::nullopt;
    }
    double best_g = best->lhs - best->rhs0;
    const auto accept = [&](PointSample cand) {
        if (p_.repair) {
            p_.repair(cand);
        }
        if (eps && !normalize(cand, *eps)) {
            return false;
        }
        const auto terms = evaluate(cand);
        if (!terms) {
            return false;
        }
        const double g = terms->lhs - terms->rhs0;
        if (g > best_g + 1e-15 * (1.0 + std::fabs(best_g))) {
            best_g = g;
            best = terms;
            s = std::move(cand);
            return true;
        }
        return false;
    };
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool improved = false;
        for (const auto& c : coords_) {
            const double r = range_of(c.field);
            const double lo = c.field == Field::t ? 0.0 : -r;
            const double v = coord_ref(s, c);
            std::vector<double> trial{0.0, 0.5 * v, 2.0 * v};
            for (double f : {1.0, 0.1, 0.01, 1e-3}) {
                trial.push_back(v + f * r);
                trial.push_back(v - f * r);
            }
            if (auto pv = partner(s, c)) {
                trial.push_back(*pv);
            }
            for (double nv : trial) {
                nv = std::clamp(nv, lo, r);
                if (nv == v) {
                    continue;
                }
                PointSample cand = s;
                coord_ref(cand, c) = nv;
                if (accept(std::move(cand))) {
                    improved = true;
                    break;
                }
            }
        }
        // Whole-block moves: quadratic forms with cross terms can stall
        // single-coordinate moves short of z = 0 or u = u'.
        for (Mat PointSample::*field : {&PointSample::z, &PointSample::z2, &PointSample::u, &PointSample::u2}) {
            if ((s.*field).size() == 0) {
                continue;
            }
            for (double f : {0.0, 0.5}) {
                PointSample cand = s;
                cand.*field *= f;
                improved = accept(std::move(cand)) || improved;
            }
        }
        if (p_.use_z2 && s.z2.size() == s.z.size()) {
            PointSample cand = s;
            cand.z = cand.z2;
            improved = accept(std::move(cand)) || improved;
        }
        if (p_.use_u2 && s.u2.size() == s.u.size()) {
            PointSample cand = s;
            cand.u = cand.u2;
            improved = accept(std::move(cand)) || improved;
        }
        if (!improved) {
            break;
        }
    }
    return best;
}

ConditionVerdict Engine::run() const
{
    ConditionVerdict v;
    v.condition = p_.name;
    v.c_max = p_.c_free ? 0.0 : c_max_;
    const std::size_t n = s_.samples;
    std::vector<Evaluated> evals(n);
    parallel_for(n, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            CounterStream rs({s_.seed, static_cast<std::uint32_t>(i), 0, 0x5a});
            for (int tries = 0; tries < kDrawTries; ++tries) {
                evals[i].sample = draw(rs);
                evals[i].terms = evaluate(evals[i].sample);
                if (evals[i].terms) {
                    break;
                }
            }
        }
    });

    const double c_ref = p_.c_free ? 0.0 : c_max_;
    double sup = -std::numeric_limits<double>::infinity();
    bool boundary_violation = false;
    std::optional<Witness> worst;
    std::vector<std::pair<double, std::size_t>> scored;
    const auto note_violation = [&](const PointSample& s, const Terms& t) {
        const double margin = t.lhs - t.rhs(c_ref);
        if (margin > kViolationTol && (!worst || margin > worst->margin)) {
            worst = Witness{s, t.lhs, t.rhs(c_ref), margin, c_ref};
        }
    };
    for (std::size_t i = 0; i < n; ++i) {
        const auto& e = evals[i];
        if (!e.terms) {
            ++v.skipped_undefined;
            continue;
        }
        ++v.samples;
        const Terms& t = *e.terms;
        if (p_.c_free) {
            scored.emplace_back(t.lhs - t.rhs0, i);
            note_violation(e.sample, t);
            continue;
        }
        if (t.q > kBoundaryQ) {
            const double req = (t.lhs - t.rhs0) / t.q;
            sup = std::max(sup, req);
            scored.emplace_back(req, i);
        } else {
            ++v.boundary_layer;
            scored.emplace_back((t.lhs - t.rhs0) / kBoundaryQ, i);
            if (t.lhs > t.rhs(c_max_) + kViolationTol) {
                boundary_violation = true;
                note_violation(e.sample, t);
            }
        }
    }

    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t top = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(std::max(0, s_.refine_candidates)));

    if (p_.c_free) {
        std::vector<std::pair<PointSample, std::optional<Terms>>> refined(top);
        parallel_for(top, [&](std::size_t a, std::size_t b) {
            for (std::size_t i = a; i < b; ++i) {
                refined[i].first = evals[scored[i].second].sample;
                refined[i].second = ascend(refined[i].first, std::nullopt);
            }
        });
        for (const auto& [s, t] : refined) {
            if (t) {
                note_violation(s, *t);
            }
        }
        if (worst) {
            v.outcome = Outcome::falsified;
            v.witness = worst;
        } else {
            v.outcome = Outcome::certified;
            v.c_found = 0.0;
        }
        return v;
    }

    struct Trajectory {
        std::array<std::optional<Terms>, kScales.size()> terms;
        std::array<PointSample, kScales.size()> samples;
    };
    std::vector<Trajectory> traj(top);
    parallel_for(top, [&](std::size_t a, std::size_t b) {
        for (std::size_t i = a; i < b; ++i) {
            PointSample s = evals[scored[i].second].sample;
            if (!push_outside(s)) {
                continue;
            }
            for (std::size_t k = 0; k < kScales.size(); ++k) {
                traj[i].terms[k] = ascend(s, kScales[k]);
                traj[i].samples[k] = s;
                if (!traj[i].terms[k]) {
                    break;
                }
            }
        }
    });

    std::optional<Witness> sustained;
    for (const auto& tr : traj) {
        for (std::size_t k = 0; k < kScales.size(); ++k) {
            if (!tr.terms[k]) {
                continue;
            }
            const Terms& t = *tr.terms[k];
            if (t.q > kBoundaryQ) {
                sup = std::max(sup, (t.lhs - t.rhs0) / t.q);
            } else if (t.lhs > t.rhs(c_max_) + kViolationTol) {
                boundary_violation = true;
                note_violation(tr.samples[k], t);
            }
        }
        const auto& t3 = tr.terms[2];
        const auto& t4 = tr.terms[3];
        const auto& t5 = tr.terms[4];
        if (!t3 || !t4 || !t5) {
            continue;
        }
        const double m3 = t3->lhs - t3->rhs(c_max_);
        const double m4 = t4->lhs - t4->rhs(c_max_);
        const double m5 = t5->lhs - t5->rhs(c_max_);
        const double r3 = (t3->lhs - t3->rhs0) / t3->q;
        const double r5 = (t5->lhs - t5->rhs0) / t5->q;
        if (m5 > kViolationTol && m4 > 0.0 && m3 > 0.0 && r5 >= 5.0 * r3) {
            if (!sustained || m5 > sustained->margin) {
                sustained = Witness{tr.samples[4], t5->lhs, t5->rhs(c_max_), m5, c_max_};
            }
        }
    }

    v.sup_c_required = std::isfinite(sup) ? sup : 0.0;
    if (sustained) {
        v.outcome = Outcome::falsified;
        v.witness = sustained;
        v.note = "violation grows as y approaches the boundary of K";
    } else if (v.sup_c_required <= c_max_ && !boundary_violation) {
        v.outcome = Outcome::certified;
        v.c_found = std::max(0.0, v.sup_c_required);
    } else {
        v.outcome = Outcome::inconclusive;
        v.note = boundary_violation ? "boundary-layer violation not sustained under refinement"
                                    : "required constant exceeds the search cap";
    }
    return v;
}

void require_same_shapes(const Generator& f1, const Generator& f2)
{
    if (f1.dim() != f2.dim() || f1.brownian_dim() != f2.brownian_dim() || f1.atoms() != f2.atoms()) {
        throw std::invalid_argument("generators " + f1.name() + " and " + f2.name() + " have different shapes");
    }
}

void require_marks(const Generator& g, const FiniteMarkMeasure& marks)
{
    if (g.atoms() != marks.size()) {
        throw std::invalid_argument("generator " + g.name() + " does not match the mark measure");
    }
}

double wilson_half(double phat, double n, double& centre)
{
    const double z = 1.959963984540054;
    const double denom = 1.0 + z * z / n;
    centre = (phat + z * z / (2.0 * n)) / denom;
    return z * std::sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom;
}

}  // namespace

const char* to_string(Outcome o)
{
    switch (o) {
    case Outcome::certified: return "certified";
    case Outcome::falsified: return "falsified";
    case Outcome::inconclusive: return "inconclusive";
    }
    return "?";
}

std::optional<Terms> viability_terms(const Generator& gen, const ConvexBody& k, const FiniteMarkMeasure& marks,
                                     const PointSample& s)
{
    const auto h = hess_dist2(k, s.y);
    if (!h) {
        return std::nullopt;
    }
    const Vec proj = project(k, s.y);
    const Vec out = s.y - proj;
    Terms t;
    t.lhs = 4.0 * out.dot(gen.evaluate(s.t, s.y, s.z, s.u));
    t.rhs0 = hessian_form(*h, s.z) + 2.0 * jump_defect(k, s.y, s.u, marks);
    t.q = out.squaredNorm();
    return t;
}

Terms comparison_terms(const Generator& f1, const Generator& f2, const FiniteMarkMeasure& marks,
                       const PointSample& s)
{
    const int m = f1.dim();
    const Vec yplus = s.y.cwiseMax(0.0);
    const Vec yminus = (-s.y).cwiseMax(0.0);
    const Vec diff = f1.evaluate(s.t, yplus + s.y2, s.z, s.u) - f2.evaluate(s.t, s.y2, s.z2, s.u2);
    Terms t;
    t.lhs = -4.0 * yminus.dot(diff);
    t.q = yminus.squaredNorm();
    double rhs = 0.0;
    for (int k = 0; k < m; ++k) {
        const double yk = s.y(k);
        if (yk < 0.0) {
            rhs += 2.0 * (s.z.row(k) - s.z2.row(k)).squaredNorm();
        }
        for (std::size_t j = 0; j < marks.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double du = s.u(k, jj) - s.u2(k, jj);
            const double a = neg(yk + du);
            const double term = yk >= 0.0 ? a * a : a * a - yk * yk - 2.0 * yk * du;
            rhs += 2.0 * term * marks.weight(j);
        }
    }
    t.rhs0 = rhs;
    return t;
}

std::optional<Terms> comparison_terms_generic(const Generator& f1, const Generator& f2, const ConvexBody& k,
                                              const FiniteMarkMeasure& marks, const PointSample& s)
{
    const auto h = hess_dist2(k, s.y);
    if (!h) {
        return std::nullopt;
    }
    const Vec proj = project(k, s.y);
    const Vec out = s.y - proj;
    const Vec diff = f1.evaluate(s.t, proj + s.y2, s.z, s.u) - f2.evaluate(s.t, s.y2, s.z2, s.u2);
    Terms t;
    t.lhs = 4.0 * out.dot(diff);
    t.rhs0 = hessian_form(*h, s.z - s.z2) + 2.0 * jump_defect(k, s.y, s.u - s.u2, marks);
    t.q = out.squaredNorm();
    return t;
}

Terms m1_terms(const Generator& f1, const Generator& f2, const FiniteMarkMeasure& marks, const PointSample& s)
{
    Terms t;
    t.lhs = -(f1.evaluate(s.t, s.y2, s.z, s.u)(0) - f2.evaluate(s.t, s.y2, s.z, s.u2)(0));
    for (std::size_t j = 0; j < marks.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        t.rhs0 += (s.u(0, jj) - s.u2(0, jj)) * marks.weight(j);
    }
    return t;
}

Terms structural_b_terms(const Generator& gen, int k, const FiniteMarkMeasure& marks, const PointSample& s)
{
    Terms t;
    t.lhs = -(gen.evaluate(s.t, s.y + s.y2, s.z, s.u)(k) - gen.evaluate(s.t, s.y2, s.z, s.u2)(k));
    for (std::size_t j = 0; j < marks.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        t.rhs0 += (s.u(k, jj) - s.u2(k, jj)) * marks.weight(j);
    }
    return t;
}

Terms structural_c_terms(const Generator& gen, const FiniteMarkMeasure& marks, const PointSample& s)
{
    const int m = gen.dim();
    const Vec yplus = s.y.cwiseMax(0.0);
    const Vec diff = gen.evaluate(s.t, yplus + s.y2, s.z, s.u) - gen.evaluate(s.t, s.y2, s.z, s.u2);
    Terms t;
    for (int k = 0; k < m; ++k) {
        const double yk = s.y(k);
        if (yk < 0.0) {
            t.lhs += 4.0 * yk * diff(k);
            t.q += yk * yk;
        }
        for (std::size_t j = 0; j < marks.size(); ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double du = s.u(k, jj) - s.u2(k, jj);
            const double a = yk < 0.0 ? du : neg(yk + du);
            t.rhs0 += 2.0 * a * a * marks.weight(j);
        }
    }
    return t;
}

ConditionVerdict check_viability_condition(const Generator& gen, const ConvexBody& k,
                                           const FiniteMarkMeasure& marks, const Sampler& sampler, double c_max)
{
    if (gen.dim() != k.dim()) {
        throw std::invalid_argument("check_viability_condition: generator and set dimensions differ");
    }
    require_marks(gen, marks);
    Problem p;
    p.name = "viability";
    p.body = &k;
    p.hessian = true;
    p.ydim = gen.dim();
    p.rows = gen.dim();
    p.d = gen.brownian_dim();
    p.atoms = gen.atoms();
    p.eval = [&](const PointSample& s) { return viability_terms(gen, k, marks, s); };
    return Engine(p, sampler, c_max).run();
}

ConditionVerdict check_comparison_m1(const Generator& f1, const Generator& f2, const FiniteMarkMeasure& marks,
                                     const Sampler& sampler)
{
    if (f1.dim() != 1 || f2.dim() != 1) {
        throw std::invalid_argument("check_comparison_m1: both generators must be scalar (m = 1)");
    }
    require_same_shapes(f1, f2);
    require_marks(f1, marks);
    Problem p;
    p.name = "comparison-scalar";
    p.c_free = true;
    p.ydim = 1;
    p.rows = 1;
    p.d = f1.brownian_dim();
    p.atoms = f1.atoms();
    p.use_y = false;
    p.use_y2 = true;
    p.use_u2 = true;
    p.repair = [](PointSample& s) { s.u = s.u.cwiseMax(s.u2); };
    p.eval = [&](const PointSample& s) { return std::optional<Terms>(m1_terms(f1, f2, marks, s)); };
    return Engine(p, sampler, 0.0).run();
}

ConditionVerdict check_comparison_multidim(const Generator& f1, const Generator& f2,
                                           const FiniteMarkMeasure& marks, const Sampler& sampler, double c_max)
{
    require_same_shapes(f1, f2);
    require_marks(f1, marks);
    const ConvexBody orthant = ConvexBody::orthant_product(f1.dim(), 0);
    Problem p;
    p.name = "comparison";
    p.body = &orthant;
    p.hessian = true;
    p.ydim = f1.dim();
    p.rows = f1.dim();
    p.d = f1.brownian_dim();
    p.atoms = f1.atoms();
    p.use_y2 = p.use_z2 = p.use_u2 = true;
    p.eval = [&](const PointSample& s) { return std::optional<Terms>(comparison_terms(f1, f2, marks, s)); };
    return Engine(p, sampler, c_max).run();
}

ConditionVerdict check_comparison_matrix(const Generator& f1, const Generator& f2, int order,
                                         const FiniteMarkMeasure& marks, const Sampler& sampler, double c_max)
{
    require_same_shapes(f1, f2);
    require_marks(f1, marks);
    if (order < 1 || f1.dim() != sym_vec_size(order)) {
        throw std::invalid_argument("check_comparison_matrix: generator dimension must be order(order+1)/2");
    }
    if (f1.brownian_dim() != 1) {
        throw std::invalid_argument("check_comparison_matrix: Brownian dimension must be 1");
    }
    const ConvexBody cone = ConvexBody::psd_cone(order);
    Problem p;
    p.name = "comparison-matrix";
    p.body = &cone;
    p.hessian = true;
    p.ydim = f1.dim();
    p.rows = f1.dim();
    p.d = 1;
    p.atoms = f1.atoms();
    p.use_y2 = p.use_z2 = p.use_u2 = true;
    p.eval = [&](const PointSample& s) { return comparison_terms_generic(f1, f2, cone, marks, s); };
    auto v = Engine(p, sampler, c_max).run();
    bool zu_free = true;
    for (const auto* g : {&f1, &f2}) {
        for (const auto& fl : g->dependencies()) {
            zu_free = zu_free && !fl.uses_z() && !fl.uses_u();
        }
    }
    if (zu_free) {
        v.note += std::string(v.note.empty() ? "" : "; ")
                  + "drivers independent of (z, u): reduced form -4<y-, F1(y+ + y') - F2(y')> <= C |y-|^2";
    }
    return v;
}

bool StructuralReport::comparison_holds() const
{
    return a_pass && b.outcome == Outcome::certified && c.outcome == Outcome::certified;
}

StructuralReport check_structural(const Generator& gen, const FiniteMarkMeasure& marks, const Sampler& sampler,
                                  double c_max)
{
    require_marks(gen, marks);
    const int m = gen.dim();
    StructuralReport rep;
    rep.u_diagonal = true;
    for (int k = 0; k < m; ++k) {
        const auto obs = dependency_probe(gen, k, 64, sampler.seed, sampler.horizon);
        for (int l = 0; l < m; ++l) {
            const auto ls = static_cast<std::size_t>(l);
            if (l != k && obs.z_rows[ls]) {
                rep.a_pass = false;
                rep.a_offending.push_back("f_" + std::to_string(k + 1) + " depends on z_" + std::to_string(l + 1));
            }
            if (l != k && obs.u_rows[ls]) {
                rep.u_diagonal = false;
            }
        }
    }

    rep.b.condition = "structural-b";
    rep.b.outcome = Outcome::certified;
    for (int k = 0; k < m; ++k) {
        Problem p;
        p.name = "structural-b";
        p.c_free = true;
        p.ydim = m;
        p.rows = m;
        p.d = gen.brownian_dim();
        p.atoms = gen.atoms();
        p.use_y2 = p.use_u2 = true;
        p.repair = [k](PointSample& s) {
            s.y = s.y.cwiseMax(0.0);
            s.y(k) = 0.0;
            s.u = s.u.cwiseMax(s.u2);
        };
        p.eval = [&gen, &marks, k](const PointSample& s) {
            return std::optional<Terms>(structural_b_terms(gen, k, marks, s));
        };
        Sampler local = sampler;
        local.seed = sampler.seed + static_cast<std::uint64_t>(k) + 1;
        auto vk = Engine(p, local, 0.0).run();
        rep.b.samples += vk.samples;
        if (vk.outcome == Outcome::falsified && rep.b.outcome != Outcome::falsified) {
            rep.b.outcome = Outcome::falsified;
            rep.b.witness = vk.witness;
            rep.b.note = "component " + std::to_string(k + 1);
        }
    }

    const ConvexBody orthant = ConvexBody::orthant_product(m, 0);
    Problem p;
    p.name = "structural-c";
    p.body = &orthant;
    p.hessian = true;
    p.ydim = m;
    p.rows = m;
    p.d = gen.brownian_dim();
    p.atoms = gen.atoms();
    p.use_y2 = p.use_u2 = true;
    p.repair = [](PointSample& s) { s.u = s.u.cwiseMin(s.u2); };
    p.eval = [&](const PointSample& s) { return std::optional<Terms>(structural_c_terms(gen, marks, s)); };
    rep.c = Engine(p, sampler, c_max).run();

    rep.reduced_form_consistent =
        !(rep.u_diagonal && rep.a_pass && rep.b.outcome == Outcome::certified) || rep.c.outcome != Outcome::falsified;
    return rep;
}

StackedSystem stacked_reduction(const Generator& f1, const Generator& f2)
{
    require_same_shapes(f1, f2);
    const int m = f1.dim();
    const int d = f1.brownian_dim();
    const std::size_t atoms = f1.atoms();
    const auto mm = static_cast<std::size_t>(m);

    std::vector<DependencyFlags> deps(2 * mm, DependencyFlags::none(2 * m, atoms));
    const auto merge = [&](DependencyFlags& dst, const DependencyFlags& src, bool both_halves) {
        for (std::size_t l = 0; l < mm; ++l) {
            for (std::size_t half = both_halves ? 0 : 1; half < 2; ++half) {
                const std::size_t at = half * mm + l;
                dst.y[at] = dst.y[at] || src.y[l];
                dst.z_rows[at] = dst.z_rows[at] || src.z_rows[l];
                dst.u_rows[at] = dst.u_rows[at] || src.u_rows[l];
            }
        }
        for (std::size_t j = 0; j < atoms; ++j) {
            dst.u_atoms[j] = dst.u_atoms[j] || src.u_atoms[j];
        }
    };
    for (std::size_t k = 0; k < mm; ++k) {
        merge(deps[k], f1.dependencies()[k], true);
        merge(deps[k], f2.dependencies()[k], false);
        merge(deps[mm + k], f2.dependencies()[k], false);
    }
    const double lip = std::sqrt(2.0) * f1.lipschitz() + 2.0 * f2.lipschitz();
    auto fn = [f1, f2, m](double t, const Vec& y, const Mat& z, const Mat& u) {
        const Vec y2 = y.tail(m);
        const Mat z2 = z.bottomRows(m);
        const Mat u2 = u.bottomRows(m);
        const Vec g2 = f2(t, y2, z2, u2);
        Vec out(2 * m);
        out.head(m) = f1(t, y.head(m) + y2, z.topRows(m) + z2, u.topRows(m) + u2) - g2;
        out.tail(m) = g2;
        return out;
    };
    return {Generator("stacked(" + f1.name() + "," + f2.name() + ")", 2 * m, d, atoms, lip, std::move(deps), fn),
            ConvexBody::orthant_product(m, m)};
}

bool witness_violates(const Witness& w, const Terms& replayed)
{
    return replayed.lhs > replayed.rhs(w.c) + kViolationTol;
}

EmpiricalViability check_viability_empirical(const Generator& gen, const std::function<double(const Vec&)>& dist,
                                             const TerminalCondition& xi, std::shared_ptr<const DrivingPaths> paths,
                                             const SolverConfig& config, double tolerance)
{
    const std::size_t np = paths->n_paths();
    for (std::size_t p = 0; p < np; ++p) {
        if (dist(xi(*paths, p)) > 1e-9) {
            throw std::invalid_argument("terminal condition " + xi.name + " lies outside K on path "
                                        + std::to_string(p));
        }
    }
    const BsdeSolution sol = solve_backward(gen, xi, paths, config);
    EmpiricalViability out;
    out.stats = distance_stats(sol, dist);
    out.max_mean_dist = *std::max_element(out.stats.mean.begin(), out.stats.mean.end());
    out.tolerance = tolerance;
    out.warnings = sol.warnings;
    std::vector<double> pmax(np, 0.0);
    parallel_for(np, [&](std::size_t p0, std::size_t p1) {
        for (std::size_t p = p0; p < p1; ++p) {
            for (std::size_t i = 0; i <= sol.steps(); ++i) {
                pmax[p] = std::max(pmax[p], dist(sol.y(i, p)));
            }
        }
    });
    double s = 0.0;
    for (double v : pmax) {
        s += v;
    }
    const double mu = s / static_cast<double>(np);
    double ss = 0.0;
    for (double v : pmax) {
        ss += (v - mu) * (v - mu);
    }
    out.pathwise_max_mean = mu;
    out.pathwise_max_ci =
        np > 1 ? 1.959963984540054 * std::sqrt(ss / static_cast<double>(np - 1) / static_cast<double>(np)) : 0.0;
    out.viable = out.pathwise_max_mean <= tolerance;
    return out;
}

ComparisonStats empirical_comparison(const Generator& f1, const Generator& f2, const TerminalCondition& xi1,
                                     const TerminalCondition& xi2, std::shared_ptr<const DrivingPaths> paths,
                                     const SolverConfig& config)
{
    require_same_shapes(f1, f2);
    const std::size_t np = paths->n_paths();
    for (std::size_t p = 0; p < np; ++p) {
        if (((xi1(*paths, p) - xi2(*paths, p)).array() < 0.0).any()) {
            throw std::invalid_argument("ordering violated in terminal data on path " + std::to_string(p));
        }
    }
    ComparisonStats out;
    out.first.emplace(solve_backward(f1, xi1, paths, config));
    out.second.emplace(solve_backward(f2, xi2, paths, config));
    const auto& a = *out.first;
    const auto& b = *out.second;
    const int m = f1.dim();
    out.t = paths->grid().nodes();
    out.overall_min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= a.steps(); ++i) {
        double mn = std::numeric_limits<double>::infinity();
        std::size_t bad = 0;
        for (std::size_t p = 0; p < np; ++p) {
            double g = std::numeric_limits<double>::infinity();
            for (int k = 0; k < m; ++k) {
                g = std::min(g, a.y_component(i, p, k) - b.y_component(i, p, k));
            }
            mn = std::min(mn, g);
            if (g < -kViolationTol) {
                ++bad;
            }
        }
        const double n = static_cast<double>(np);
        const double phat = static_cast<double>(bad) / n;
        double centre = 0.0;
        const double half = wilson_half(phat, n, centre);
        out.min_gap.push_back(mn);
        out.violation_fraction.push_back(phat);
        out.ci_low.push_back(std::max(0.0, centre - half));
        out.ci_high.push_back(std::min(1.0, centre + half));
        out.overall_min_gap = std::min(out.overall_min_gap, mn);
    }
    return out;
}

}  // namespace bsvlab
