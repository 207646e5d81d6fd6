# Fields package: sphere-valued fields, discrete calculus, snapshot files
