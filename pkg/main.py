#!/usr/bin/env python3
# Entry point for the SceneForge command line
import os
import sys

# Add backend directory to path
backend_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'backend')
sys.path.insert(0, backend_path)

if __name__ == '__main__':
    from cli import main
    sys.exit(main())
