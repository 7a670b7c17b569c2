#include "fixtures.hpp"

#include "fopt/cmi.hpp"

namespace fopt::test {

const SmallModels& small_models() {
  static const SmallModels m = [] {
    SmallModels s;
    s.ds = data::collect_dataset(s.spec, {}, 20000, 0);
    metric::MetricConfig mc;
    mc.iterations = 1500;
    cmi::CmiConfig cc;
    s.distance = metric::train_learned_distance(s.ds, mc, &cc);
    fermat::FermatConfig fc;
    fc.iterations = 2000;
    s.encoder = fermat::train_fermat_encoder(s.ds, s.distance, fc);
    return s;
  }();
  return m;
}

}  // namespace fopt::test
