#include "njode/net.hpp"

#include <cmath>
#include <map>

#include "njode/errors.hpp"
#include "njode/rng.hpp"
#include "njode/text_table.hpp"

namespace njode::nn {

FeedForwardNet::FeedForwardNet(std::vector<int> widths, double dropout, bool residual, std::string name)
    : widths_(std::move(widths)), dropout_(dropout), residual_(residual), name_(std::move(name)) {
  if (widths_.size() < 2) throw PreconditionError("network needs at least input and output widths");
  for (int w : widths_)
    if (w < 1) throw PreconditionError("network widths must be positive");
  if (!(dropout_ >= 0.0 && dropout_ < 1.0)) throw PreconditionError("dropout rate must lie in [0, 1)");
  if (residual_ && widths_.front() != widths_.back())
    throw PreconditionError("residual network requires input width == output width");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const auto tag = std::to_string(l);
    weights_.push_back({name_ + ".W" + tag, Matrix::Zero(widths_[l], widths_[l + 1])});
    biases_.push_back({name_ + ".b" + tag, Matrix::Zero(1, widths_[l + 1])});
  }
}

std::vector<Parameter*> FeedForwardNet::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Parameter*> FeedForwardNet::parameters() const {
  std::vector<const Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::size_t FeedForwardNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, const DropoutContext& ctx,
                    std::uint64_t layer) {
  if (static_cast<Eigen::Index>(ctx.row_keys.size()) != rows)
    throw PreconditionError("dropout context has " + std::to_string(ctx.row_keys.size()) + " row keys for " +
                            std::to_string(rows) + " rows");
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  Matrix mask(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const CounterRng rng(mix_keys({ctx.seed, tag(StreamTag::kDropout), ctx.row_keys[static_cast<std::size_t>(r)],
                                   ctx.site, layer}));
    for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = rng.uniform(static_cast<std::uint64_t>(c)) < keep ? scale : 0.0;
  }
  return mask;
}

Var FeedForwardNet::forward(Tape& tape, Var x, const DropoutContext* dropout) const {
  if (tape.value(x).cols() != input_width())
    throw PreconditionError(name_ + ": input width " + std::to_string(tape.value(x).cols()) + ", expected " +
                            std::to_string(input_width()));
  Var a = x;
  const std::size_t last = weights_.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    a = tape.linear(a, tape.parameter(weights_[l]), tape.parameter(biases_[l]));
    if (l == last) break;
    a = tape.tanh(a);
    if (dropout != nullptr && dropout_ > 0.0) {
      const Matrix& v = tape.value(a);
      a = tape.mul_const(a, dropout_mask(v.rows(), v.cols(), dropout_, *dropout, l));
    }
  }
  if (residual_) a = tape.add(a, x);
  return a;
}

FeedForwardNet init_weights(const std::vector<int>& widths, std::uint64_t seed, double dropout, bool residual,
                            const std::string& name) {
  FeedForwardNet net(widths, dropout, residual, name);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Matrix& w = net.weight(l).value;
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    const CounterRng rng(mix_keys({seed, tag(StreamTag::kInit), l}));
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = bound * (2.0 * rng.uniform(static_cast<std::uint64_t>(i)) - 1.0);
  }
  return net;
}

NetForward net_forward(const FeedForwardNet& net, std::span<const double> x, NetMode mode) {
  if (static_cast<int>(x.size()) != net.input_width())
    throw PreconditionError("net_forward: input has " + std::to_string(x.size()) + " entries, expected " +
                            std::to_string(net.input_width()));
  NetForward out;
  Matrix xin(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) xin(0, static_cast<Eigen::Index>(i)) = x[i];
  out.input = out.tape.input(std::move(xin));
  const std::uint64_t row_key = 0;
  DropoutContext ctx{mode.seed, std::span<const std::uint64_t>(&row_key, 1), 0};
  out.output = net.forward(out.tape, out.input, mode.train ? &ctx : nullptr);
  const Matrix& y = out.tape.value(out.output);
  out.y.assign(y.data(), y.data() + y.size());
  return out;
}

NetGradients net_backward(NetForward& fwd, const FeedForwardNet& net, std::span<const double> upstream) {
  if (static_cast<int>(upstream.size()) != net.output_width())
    throw PreconditionError("net_backward: upstream has wrong length");
  Matrix& g = fwd.tape.grad(fwd.output);
  for (std::size_t i = 0; i < upstream.size(); ++i) g(0, static_cast<Eigen::Index>(i)) += upstream[i];
  fwd.tape.backward();
  NetGradients out;
  for (const Parameter* p : net.parameters()) {
    const Matrix* pg = fwd.tape.parameter_grad(*p);
    out.params.push_back(pg ? *pg : Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  const Matrix& gx = fwd.tape.has_grad(fwd.input) ? fwd.tape.grad(fwd.input) : Matrix::Zero(1, net.input_width());
  out.input.assign(gx.data(), gx.data() + gx.size());
  return out;
}

void AdamState::step(std::span<Parameter* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw PreconditionError("adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = params[i]->value;
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols())
      throw PreconditionError("adam: gradient shape mismatch for " + params[i]->name);
    if (!grads[i].allFinite()) throw NumericError("adam: non-finite gradient for " + params[i]->name);
  }
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  } else if (m_.size() != params.size()) {
    throw PreconditionError("adam: parameter count changed between steps");
  }

  ++steps_;
  const auto& c = config_;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i]->value;
    if (m_[i].rows() != p.rows() || m_[i].cols() != p.cols())
      throw PreconditionError("adam: moment shape mismatch for " + params[i]->name);
    const Matrix& g = grads[i];
    m_[i] = c.beta1 * m_[i] + (1.0 - c.beta1) * g;
    v_[i] = c.beta2 * v_[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
    if (c.weight_decay != 0.0) p -= (c.lr * c.weight_decay) * p;
    p.array() -= c.lr * (m_[i].array() / correction1) / ((v_[i].array() / correction2).sqrt() + c.eps);
  }
}

std::string parameters_to_csv(std::span<const Parameter* const> params) {
  std::string out = "name,row,col,value\n";
  for (const Parameter* p : params) {
    for (Eigen::Index r = 0; r < p->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        out += p->name;
        out += ',' + std::to_string(r) + ',' + std::to_string(c) + ',';
        out += text::format_double(p->value(r, c));
        out += '\n';
      }
    }
  }
  return out;
}

void parameters_from_csv(std::string_view csv, std::span<Parameter* const> params) {
  std::map<std::string, Parameter*, std::less<>> by_name;
  std::map<std::string, Eigen::Index, std::less<>> filled;
  for (Parameter* p : params) by_name[p->name] = p;
  text::LineReader reader(csv);
  std::string_view line;
  if (!reader.next(line) || line != "name,row,col,value") throw DataError("parameter table: bad header");
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto f = text::split_fields(line);
    std::int64_t r = 0, c = 0;
    double v = 0.0;
    if (f.size() != 4 || !text::parse_int(f[1], r) || !text::parse_int(f[2], c) || !text::parse_double(f[3], v))
      throw DataError("parameter table: malformed row at line " + std::to_string(reader.line_number()));
    const auto it = by_name.find(f[0]);
    if (it == by_name.end()) throw DataError("parameter table: unknown parameter " + std::string(f[0]));
    Matrix& m = it->second->value;
    if (r < 0 || c < 0 || r >= m.rows() || c >= m.cols())
      throw DataError("parameter table: index out of range for " + std::string(f[0]));
    m(r, c) = v;
    ++filled[std::string(f[0])];
  }
  for (Parameter* p : params) {
    const auto it = filled.find(p->name);
    if (it == filled.end() || it->second != p->value.size())
      throw DataError("parameter table: incomplete entries for " + p->name);
  }
}

}  // namespace njode::nn
