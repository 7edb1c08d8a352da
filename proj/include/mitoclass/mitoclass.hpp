#pragma once

#include "mitoclass/checkpoint.hpp"
#include "mitoclass/csv.hpp"
#include "mitoclass/cv.hpp"
#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/eval.hpp"
#include "mitoclass/hpo.hpp"
#include "mitoclass/losses.hpp"
#include "mitoclass/netcore.hpp"
#include "mitoclass/pixelpipe.hpp"
#include "mitoclass/png_io.hpp"
#include "mitoclass/rng.hpp"
#include "mitoclass/splits.hpp"
#include "mitoclass/tensor.hpp"
#include "mitoclass/trainer.hpp"
