"""Expert selection per test point"""
