"""Trace finite element method for the incompressible Navier-Stokes equations
on a surface embedded in a 3D background mesh, with penalty enforcement of
tangentiality."""

__version__ = "0.1.0"
