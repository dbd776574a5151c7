# Analysis, simulation and statistics services
