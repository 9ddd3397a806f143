// Library walk-through: estimate theta with DMD, build an eigeninit model and
// train it on a linear system, then compare against a Gaussian start.

#include <iostream>

#include "kae/kae.hpp"

int main() {
    using namespace kae;
    Rng data_rng(1);
    const auto lin = gen_linear_dataset({std::polar(1.0, 0.3), std::polar(1.0, -0.3), {0.8, 0.0}, {0.5, 0.0}}, 4,
                                        60, 80, data_rng);
    std::cout << "theta from DMD: " << estimate_theta_for(lin.dataset, 4).theta << "\n";

    const Dataset d = standardize_split(lin.dataset, {});
    TrainConfig cfg;
    cfg.horizon = 5;
    cfg.epochs = 15;

    for (const auto& [name, init] : {std::pair<const char*, KoopmanInit>{"gaussian", GaussianKoopmanInit{}},
                                     {"eigeninit", EigenKoopmanInit{SpikeSlabSpec{0.5, 0.0, 1.0}}}}) {
        Rng net(2), koop(3);
        KaeModel model = build_model(d.state_dim(), {4, {32}}, init, net, koop);
        std::cout << name << " initial |lambda|: " << eig_decompose(model.koopman.value).moduli().transpose() << "\n";
        const auto log = train(model, d, cfg);
        const auto h = evaluate_horizons(model, d, 20);
        std::cout << "  final val loss " << log.val_loss.back() << ", cumulative test error " << h.cumulative
                  << ", trained |lambda|: " << log.moduli.back().transpose() << "\n";
    }
}
