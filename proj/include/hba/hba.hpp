#pragma once

// Umbrella header.

#include "hba/analog.hpp"
#include "hba/anomaly.hpp"
#include "hba/dimred.hpp"
#include "hba/distributions.hpp"
#include "hba/error.hpp"
#include "hba/evaluate.hpp"
#include "hba/fields.hpp"
#include "hba/forecast.hpp"
#include "hba/io.hpp"
#include "hba/model.hpp"
#include "hba/nmf.hpp"
#include "hba/procrustes.hpp"
#include "hba/rng.hpp"
#include "hba/sampler.hpp"
#include "hba/synthetic.hpp"
#include "hba/time.hpp"
#include "hba/truncnorm.hpp"
