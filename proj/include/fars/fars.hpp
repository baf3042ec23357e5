#pragma once

#include "fars/csv.hpp"
#include "fars/data_model.hpp"
#include "fars/density.hpp"
#include "fars/error.hpp"
#include "fars/factor_models.hpp"
#include "fars/factor_uncertainty.hpp"
#include "fars/faqr.hpp"
#include "fars/parallel.hpp"
#include "fars/pipeline.hpp"
#include "fars/plot_data.hpp"
#include "fars/quantile_regression.hpp"
#include "fars/skewt.hpp"
#include "fars/synthetic.hpp"
#include "fars/version.hpp"
#include "fars/fixture.hpp"
