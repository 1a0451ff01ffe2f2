# Services layer for conelab
# Trajectory building, tail analysis and shooting
