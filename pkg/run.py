"""
Scene Sparse Coding - Entry Point
`python run.py <command>` runs the pipeline CLI; `python run.py serve` starts the inspection API
"""
from app.cli import main

if __name__ == '__main__':
    main()
