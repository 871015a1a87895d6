/* moment stand-in for the test corpus */
window.moment = function () {
  return { format: function () { return '2024'; } };
};
