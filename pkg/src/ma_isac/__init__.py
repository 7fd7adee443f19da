"""Joint beamforming and movable-antenna position optimization for bistatic ISAC."""
