# Tests package for the two-stage sampling plan toolkit
