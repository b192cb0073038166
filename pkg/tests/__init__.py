# split-bench tests
