#include "megcast/ar.hpp"

namespace megcast {

void ArModel::validate() const {
    if (order < 1) throw ConfigError("AR order must be >= 1");
    if (coef.cols() != order) throw ConfigError("coefficient width must equal order");
    if (intercept.size() != coef.rows()) throw ConfigError("one intercept per channel");
}

VectorXd ar_forward(const ArModel& model, const MatrixXd& context) {
    model.validate();
    if (context.rows() != model.coef.rows() || context.cols() != model.order)
        throw std::invalid_argument("context must be C x K");
    return (model.coef.cwiseProduct(context)).rowwise().sum() + model.intercept;
}

}  // namespace megcast
