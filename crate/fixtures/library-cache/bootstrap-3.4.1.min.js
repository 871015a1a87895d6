/* bootstrap stand-in for the test corpus */
(function ($) {
  ['modal', 'tooltip', 'popover', 'dropdown', 'collapse', 'tab', 'carousel'].forEach(function (m) {
    $.fn[m] = function () { return this; };
  });
})(window.jQuery);
