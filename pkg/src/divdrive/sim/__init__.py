"""2D kinematic driving world, scripted expert, infraction detection and scoring."""
