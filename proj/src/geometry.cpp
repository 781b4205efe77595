#include "clifford/geometry.hpp"

#include "clifford/error.hpp"
#include "clifford/ops.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace clifford {

std::string_view to_string(CliMode mode) {
  switch (mode) {
    case CliMode::inner: return "inner";
    case CliMode::wedge: return "wedge";
    case CliMode::full: return "full";
  }
  return "?";
}

CliMode parse_cli_mode(std::string_view name) {
  if (name == "inner") return CliMode::inner;
  if (name == "wedge") return CliMode::wedge;
  if (name == "full") return CliMode::full;
  throw ConfigError("unknown cli_mode '" + std::string(name) + "' (expected inner, wedge or full)");
}

ShiftSet::ShiftSet(std::vector<int> offsets) : offsets_(std::move(offsets)) {
  for (std::size_t i = 0; i < offsets_.size(); ++i) {
    if (offsets_[i] < 1) throw ConfigError("shift offsets must be >= 1, got " + std::to_string(offsets_[i]));
    if (i > 0 && offsets_[i] <= offsets_[i - 1]) {
      throw ConfigError("shift offsets must be strictly increasing: " + to_string());
    }
  }
}

void ShiftSet::validate_for(Index dim) const {
  if (offsets_.empty()) throw ConfigError("shift set is empty");
  if (max() >= dim) {
    throw ConfigError("shift " + std::to_string(max()) + " must be smaller than the width " + std::to_string(dim));
  }
}

ShiftSet ShiftSet::parse(std::string_view text) {
  std::vector<int> values;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = text.substr(0, comma);
    int v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("bad shift list '" + std::string(text) + "'");
    }
    values.push_back(v);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return ShiftSet(std::move(values));
}

std::string ShiftSet::to_string() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < offsets_.size(); ++i) out << (i ? "," : "") << offsets_[i];
  return out.str();
}

Index interaction_channels(CliMode mode, const ShiftSet& shifts, Index dim) {
  const Index streams = mode == CliMode::full ? 2 : 1;
  return streams * static_cast<Index>(shifts.size()) * dim;
}

namespace {

template <typename S>
void require_same_shape(const Tensor<S>& h, const Tensor<S>& c, const char* op) {
  if (h.shape() != c.shape()) {
    throw DimensionError(std::string(op) + ": state " + shape_string(h.shape()) + " and context " +
                         shape_string(c.shape()) + " differ");
  }
}

}  // namespace

template <typename S>
Tensor<S> shifted_dot(const Tensor<S>& h, const Tensor<S>& c, Index s) {
  require_same_shape(h, c, "shifted_dot");
  return silu(h * roll_channels(c, s));
}

template <typename S>
Tensor<S> shifted_wedge(const Tensor<S>& h, const Tensor<S>& c, Index s) {
  require_same_shape(h, c, "shifted_wedge");
  return h * roll_channels(c, s) - c * roll_channels(h, s);
}

namespace {

template <typename S>
using Rows = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ConstRows = Eigen::Map<const Rows<S>>;
template <typename S>
using MutRows = Eigen::Map<Rows<S>>;

// out[:, j] = x[:, (j + s) % D]
template <typename S, typename Block>
void roll_into(Rows<S>& out, const Block& x, Index s) {
  const Index d = x.cols();
  out.leftCols(d - s) = x.rightCols(d - s);
  if (s > 0) out.rightCols(s) = x.leftCols(s);
}

// Adjoint of roll_into: acc[:, (j + s) % D] += g[:, j]
template <typename S, typename Block>
void unroll_add(Block&& acc, const Rows<S>& g, Index s) {
  const Index d = g.cols();
  acc.rightCols(d - s) += g.leftCols(d - s);
  if (s > 0) acc.leftCols(s) += g.rightCols(s);
}

// Rows per tile; keeps the per-shift temporaries cache resident.
Index tile_rows(Index d) { return std::max<Index>(1, 2048 / d); }

}  // namespace

// Evaluated tile by tile without materializing the rolled operands or the
// per-shift streams; the backward pass recomputes the coherence per tile.
template <typename S>
Tensor<S> clifford_interact(const Tensor<S>& h, const Tensor<S>& c, const ShiftSet& shifts, CliMode mode) {
  require_same_shape(h, c, "clifford_interact");
  if (shifts.empty()) throw ConfigError("clifford_interact: shift set is empty");
  const Index d = h.dim(-1);
  const Index rows = h.size() / d;
  const Index width = interaction_channels(mode, shifts, d);
  const bool wedge = mode != CliMode::inner;
  const bool dot = mode != CliMode::wedge;
  std::vector<Index> offsets;
  for (int s : shifts) offsets.push_back(s % d);

  Array<S> out(rows * width);
  {
    const ConstRows<S> H(h.values().data(), rows, d);
    const ConstRows<S> C(c.values().data(), rows, d);
    MutRows<S> O(out.data(), rows, width);
    const Index tile = tile_rows(d);
    Rows<S> hr, cr, coh;
    for (Index r0 = 0; r0 < rows; r0 += tile) {
      const Index n = std::min(tile, rows - r0);
      const auto Ht = H.middleRows(r0, n);
      const auto Ct = C.middleRows(r0, n);
      hr.resize(n, d);
      cr.resize(n, d);
      Index col = 0;
      for (Index s : offsets) {
        roll_into<S>(cr, Ct, s);
        coh = Ht * cr;
        if (wedge) {
          roll_into<S>(hr, Ht, s);
          O.block(r0, col, n, d) = coh - Ct * hr;
          col += d;
        }
        if (dot) {
          O.block(r0, col, n, d) = coh * (S(1) / (S(1) + (-coh).exp()));
          col += d;
        }
      }
    }
  }

  Shape shape = h.shape();
  shape.back() = width;
  auto* ih = h.impl().get();
  auto* ic = c.impl().get();
  return make_op_result<S>(
      std::move(shape), std::move(out), "clifford_interact", {&h, &c},
      [ih, ic, offsets, rows, d, width, wedge, dot](const Array<S>& g) {
        Array<S>* gh = grad_sink(*ih);
        Array<S>* gc = grad_sink(*ic);
        if (!gh && !gc) return;
        const ConstRows<S> H(ih->values.data(), rows, d);
        const ConstRows<S> C(ic->values.data(), rows, d);
        const ConstRows<S> G(g.data(), rows, width);
        const Index tile = tile_rows(d);
        Rows<S> hr, cr, coh, sig, dh, dc, dhr, dcr, gw, dq;
        for (Index r0 = 0; r0 < rows; r0 += tile) {
          const Index n = std::min(tile, rows - r0);
          const auto Ht = H.middleRows(r0, n);
          const auto Ct = C.middleRows(r0, n);
          hr.resize(n, d);
          cr.resize(n, d);
          dh.setZero(n, d);
          dc.setZero(n, d);
          Index col = 0;
          for (Index s : offsets) {
            roll_into<S>(cr, Ct, s);
            // d(h * roll(c)) feeds h directly and roll(c) through the adjoint roll.
            dcr.setZero(n, d);
            if (wedge) {
              roll_into<S>(hr, Ht, s);
              gw = G.block(r0, col, n, d);
              dh += gw * cr;
              dcr += gw * Ht;
              dc -= gw * hr;
              dhr = -(gw * Ct);
              unroll_add<S>(dh, dhr, s);
              col += d;
            }
            if (dot) {
              coh = Ht * cr;
              sig = S(1) / (S(1) + (-coh).exp());
              dq = G.block(r0, col, n, d) * sig * (S(1) + coh * (S(1) - sig));
              dh += dq * cr;
              dcr += dq * Ht;
              col += d;
            }
            unroll_add<S>(dc, dcr, s);
          }
          if (gh) MutRows<S>(gh->data(), rows, d).middleRows(r0, n) += dh;
          if (gc) MutRows<S>(gc->data(), rows, d).middleRows(r0, n) += dc;
        }
      });
}

#define CLIFFORD_INSTANTIATE(S)                                                                 \
  template Tensor<S> shifted_dot<S>(const Tensor<S>&, const Tensor<S>&, Index);                 \
  template Tensor<S> shifted_wedge<S>(const Tensor<S>&, const Tensor<S>&, Index);               \
  template Tensor<S> clifford_interact<S>(const Tensor<S>&, const Tensor<S>&, const ShiftSet&, \
                                          CliMode);

CLIFFORD_INSTANTIATE(float)
CLIFFORD_INSTANTIATE(double)

#undef CLIFFORD_INSTANTIATE

}  // namespace clifford
